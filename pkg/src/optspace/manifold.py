"""Gradient descent over pairs of orthonormal frames.

Minimizes 0.5*||P_E(N - X S Y^T)||_F^2 + 0.5*lam*||S||_F^2 with X, Y on
Stiefel manifolds. Each outer iteration refits S exactly (an r^2 x r^2 ridge
system), takes the Riemannian gradient in (X, Y), and moves along the
projected direction with Armijo backtracking and a QR retraction. The inner
refit keeps the iteration scale-free: the initialization's singular-value
scaling is corrected on the first step.
"""

from __future__ import annotations

import dataclasses
import warnings

import numpy as np
import scipy.linalg

from .obsmat import ObservedMatrix
from .spectral import Factorization, _qf

__all__ = [
    "DescentOptions",
    "DescentTrace",
    "solve_S",
    "cost",
    "riemannian_gradient",
    "descend",
]

_TINY_STEP = 1e-20


@dataclasses.dataclass(frozen=True)
class DescentOptions:
    """Schedule and tolerances for descend.

    grad_tol is absolute when given; None means 1e-7 * ||P_E(N)||_F for the
    instance at hand.
    """

    lam: float = 0.0
    max_iters: int = 500
    grad_tol: float | None = None
    cost_rel_tol: float = 1e-9
    armijo_c: float = 1e-4
    backtrack_factor: float = 0.5
    initial_step: float = 1.0

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("descent ridge weight must be nonnegative")
        if self.max_iters < 0:
            raise ValueError("max_iters must be nonnegative")
        if not 0 < self.armijo_c < 1:
            raise ValueError("armijo_c must lie strictly inside (0,1)")
        if not 0 < self.backtrack_factor < 1:
            raise ValueError("backtrack_factor must lie strictly inside (0,1)")
        if self.initial_step <= 0 or self.cost_rel_tol <= 0:
            raise ValueError("initial_step and cost_rel_tol must be positive")
        if self.grad_tol is not None and self.grad_tol < 0:
            raise ValueError("grad_tol must be nonnegative")


@dataclasses.dataclass
class DescentTrace:
    """Per-iteration cost/gradient/step records and the termination reason.

    costs[0] is the cost after the initial S refit; costs[k] follows the k-th
    accepted step. grad_norms and steps align with iterations 1..len(steps).
    """

    costs: list
    grad_norms: list
    steps: list
    reason: str = ""

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="ascii") as fh:
            fh.write("iter,cost,grad_norm,step\n")
            for i, c in enumerate(self.costs):
                g = self.grad_norms[i - 1] if 1 <= i <= len(self.grad_norms) else float("nan")
                s = self.steps[i - 1] if 1 <= i <= len(self.steps) else float("nan")
                fh.write(f"{i},{c:.17g},{g:.17g},{s:.17g}\n")


class _Workspace:
    """Precomputed index segments for masked products on one observation set."""

    def __init__(self, obs: ObservedMatrix):
        self.m, self.n = obs.m, obs.n
        self.rows, self.cols, self.vals = obs.rows, obs.cols, obs.vals
        self.nnz = obs.nnz
        # entries arrive sorted by (row, col); group them by row and, through
        # a permuted view, by column
        self.urows, self.row_starts = np.unique(obs.rows, return_index=True)
        self.row_bounds = np.append(self.row_starts, obs.nnz)
        self.corder = np.lexsort((obs.rows, obs.cols))
        self.ucols, self.col_starts = np.unique(obs.cols[self.corder], return_index=True)
        self.vals_norm = float(np.linalg.norm(obs.vals))


def _masked_values(X, S, Y, ws) -> np.ndarray:
    """Entries of X S Y^T at the observed positions."""
    if ws.nnz == 0:
        return np.zeros(0)
    return np.einsum("ij,ij->i", (X @ S)[ws.rows], Y[ws.cols])


def _row_accumulate(ws, weights, F) -> np.ndarray:
    """(m x k) matrix whose row i is sum over observed (i,j) of w_ij * F[j]."""
    out = np.zeros((ws.m, F.shape[1]))
    if ws.nnz:
        acc = np.add.reduceat(weights[:, None] * F[ws.cols], ws.row_starts, axis=0)
        out[ws.urows] = acc
    return out


def _col_accumulate(ws, weights, F) -> np.ndarray:
    """(n x k) matrix whose row j is sum over observed (i,j) of w_ij * F[i]."""
    out = np.zeros((ws.n, F.shape[1]))
    if ws.nnz:
        prod = (weights[:, None] * F[ws.rows])[ws.corder]
        out[ws.ucols] = np.add.reduceat(prod, ws.col_starts, axis=0)
    return out


def _sym(a):
    return 0.5 * (a + a.T)


def _solve_S_ws(X, Y, ws, lam) -> np.ndarray:
    r = X.shape[1]
    rhs = (X.T @ _row_accumulate(ws, ws.vals, Y)).reshape(-1)
    # Gram of the masked rank-one basis, assembled rowwise:
    # G[(a,b),(c,d)] = sum_E X_ia X_ic Y_jb Y_jd; small per-row BLAS products
    # beat any |E| x r^2 intermediate
    C = np.zeros((ws.m, r * r))
    if ws.nnz:
        Yc = Y[ws.cols]
        for k, i in enumerate(ws.urows):
            seg = Yc[ws.row_bounds[k] : ws.row_bounds[k + 1]]
            C[i] = (seg.T @ seg).reshape(-1)
    XX = (X[:, :, None] * X[:, None, :]).reshape(ws.m, r * r)
    G = (XX.T @ C).reshape(r, r, r, r).transpose(0, 2, 1, 3).reshape(r * r, r * r)
    A = G + lam * np.eye(r * r)
    try:
        # the Gram is PSD, so Cholesky doubles as the singularity detector
        s = scipy.linalg.cho_solve(
            scipy.linalg.cho_factor(A, check_finite=False), rhs, check_finite=False
        )
    except (scipy.linalg.LinAlgError, np.linalg.LinAlgError):
        s = None
    rhs_norm = max(np.linalg.norm(rhs), np.finfo(float).tiny)
    if s is None or not np.all(np.isfinite(s)) or np.linalg.norm(A @ s - rhs) > 1e-10 * rhs_norm:
        warnings.warn(
            "singular core system (lam=0 with a degenerate mask); using the least-norm solution",
            stacklevel=2,
        )
        s = np.linalg.lstsq(A, rhs, rcond=None)[0]
    return s.reshape(r, r)


def _cost_ws(X, S, Y, ws, lam) -> float:
    resid = ws.vals - _masked_values(X, S, Y, ws)
    return float(0.5 * resid @ resid + 0.5 * lam * np.sum(S * S))


def _gradient_ws(X, S, Y, ws):
    resid = ws.vals - _masked_values(X, S, Y, ws)
    gx = -_row_accumulate(ws, resid, Y) @ S.T
    gy = -_col_accumulate(ws, resid, X) @ S
    GX = gx - X @ _sym(X.T @ gx)
    GY = gy - Y @ _sym(Y.T @ gy)
    return GX, GY


def _check_frame(name, f):
    r = f.shape[1]
    if np.linalg.norm(f.T @ f - np.eye(r)) > 1e-8:
        raise ValueError(f"{name} must have orthonormal columns")


def solve_S(X, Y, obs: ObservedMatrix, lam: float) -> np.ndarray:
    """Exact minimizer of the masked ridge cost over the core, frames fixed."""
    _check_frame("X", X)
    _check_frame("Y", Y)
    return _solve_S_ws(X, Y, _Workspace(obs), lam)


def cost(X, Y, S, obs: ObservedMatrix, lam: float) -> float:
    """0.5*||P_E(N - X S Y^T)||_F^2 + 0.5*lam*||S||_F^2."""
    return _cost_ws(X, S, Y, _Workspace(obs), lam)


def riemannian_gradient(X, Y, S, obs: ObservedMatrix, lam: float):
    """Stiefel-tangent gradients (GX, GY) of the masked ridge cost.

    The Euclidean gradients are -R Y S^T and -R^T X S with
    R = P_E(N - X S Y^T); the canonical projection leaves X^T GX and Y^T GY
    skew-symmetric. The ridge term does not depend on the frames, so lam only
    matters through S.
    """
    del lam  # the penalty is frame-independent; kept for signature symmetry
    _check_frame("X", X)
    _check_frame("Y", Y)
    return _gradient_ws(X, S, Y, _Workspace(obs))


def descend(
    init: Factorization, obs: ObservedMatrix, opts: DescentOptions
) -> tuple[Factorization, DescentTrace]:
    """Run the descent from an initial factorization.

    Per iteration: refit S exactly, stop if the Riemannian gradient is below
    grad_tol, otherwise backtrack along the negative gradient with a QR
    retraction until the Armijo condition holds, then loop. Also stops when
    the relative cost decrease falls below cost_rel_tol or at max_iters. The
    returned cost never exceeds the starting cost.
    """
    ws = _Workspace(obs)
    X, Y = init.X, init.Y
    lam = opts.lam
    gtol = opts.grad_tol if opts.grad_tol is not None else 1e-7 * ws.vals_norm

    S = _solve_S_ws(X, Y, ws, lam)
    c_cur = _cost_ws(X, S, Y, ws, lam)
    trace = DescentTrace(costs=[c_cur], grad_norms=[], steps=[], reason="max_iters")

    t_try = opts.initial_step
    for _ in range(opts.max_iters):
        GX, GY = _gradient_ws(X, S, Y, ws)
        sq = float(np.sum(GX * GX) + np.sum(GY * GY))
        gnorm = np.sqrt(sq)
        trace.grad_norms.append(gnorm)
        if gnorm <= gtol:
            trace.reason = "grad_tol"
            break

        t = t_try
        accepted = False
        while t >= _TINY_STEP:
            Xn = _qf(X - t * GX)
            Yn = _qf(Y - t * GY)
            c_new = _cost_ws(Xn, S, Yn, ws, lam)
            if c_new <= c_cur - opts.armijo_c * t * sq:
                accepted = True
                break
            t *= opts.backtrack_factor
        if not accepted:
            trace.reason = "line_search_failure"
            break
        # start the next search just above the accepted step; bounded retries
        t_try = min(opts.initial_step, t / opts.backtrack_factor)

        X, Y = Xn, Yn
        S = _solve_S_ws(X, Y, ws, lam)
        c_new = _cost_ws(X, S, Y, ws, lam)
        trace.costs.append(c_new)
        trace.steps.append(t)
        decrease = c_cur - c_new
        c_cur = c_new
        if decrease < opts.cost_rel_tol * max(abs(c_cur), np.finfo(float).tiny):
            trace.reason = "cost_rel_tol"
            break

    return Factorization(X=X, S=S, Y=Y), trace

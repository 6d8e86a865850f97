"""Truncated SVD of sparse observations and the shrunken spectral estimator.

The spectral step of the completion pipeline takes the top-r singular triple
of the (trimmed) observation matrix and divides the singular values by
(1 + lambda). For fixed orthonormal frames that scaling is the exact ridge
minimizer of the unmasked surrogate cost, and the frames themselves are the
optimal ones independent of lambda. lambda may sit anywhere in (-1, inf);
values below 0 amplify, which is the right correction when only a fraction p
of the entries is observed (the raw singular values shrink by roughly p).
"""

from __future__ import annotations

import dataclasses
import warnings

import numpy as np
import scipy.sparse as sp

from .obsmat import ObservedMatrix

__all__ = [
    "ConvergenceWarning",
    "SvdTriple",
    "Factorization",
    "truncated_svd",
    "spectral_estimate",
    "soft_impute_baseline",
    "reconstruct",
]

_ORTHO_TOL = 1e-8


class ConvergenceWarning(UserWarning):
    """An iterative solver hit its iteration cap; the best iterate is returned."""


def _qf(a: np.ndarray) -> np.ndarray:
    """Orthonormal factor of a thin QR, signs fixed for determinism."""
    q, r = np.linalg.qr(a)
    s = np.sign(np.diag(r))
    s[s == 0] = 1.0
    return q * s


def _fix_signs(u: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # largest-magnitude entry of each left vector made positive, paired right
    # vector flipped with it so u s v^T is unchanged
    idx = np.argmax(np.abs(u), axis=0)
    s = np.sign(u[idx, np.arange(u.shape[1])])
    s[s == 0] = 1.0
    return u * s, v * s


@dataclasses.dataclass(frozen=True)
class SvdTriple:
    left: np.ndarray
    singulars: np.ndarray
    right: np.ndarray
    converged: bool = True
    iterations: int = 0


@dataclasses.dataclass(frozen=True)
class Factorization:
    """Orthonormal frames X (m x r), Y (n x r) and a core S (r x r)."""

    X: np.ndarray
    S: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        r = self.S.shape[0]
        if self.S.shape != (r, r) or self.X.shape[1] != r or self.Y.shape[1] != r:
            raise ValueError("inconsistent factor shapes")
        for name, f in (("X", self.X), ("Y", self.Y)):
            err = np.linalg.norm(f.T @ f - np.eye(r))
            if err > _ORTHO_TOL:
                raise ValueError(f"{name} is not orthonormal (deviation {err:.2e})")

    @property
    def rank(self) -> int:
        return self.S.shape[0]


def reconstruct(f: Factorization) -> np.ndarray:
    """Dense product X S Y^T."""
    return f.X @ f.S @ f.Y.T


def _operator(obs: ObservedMatrix):
    # dense matmuls win comfortably once the mask is this full
    if obs.nnz > 0.25 * obs.m * obs.n:
        return obs.to_dense()
    return sp.csr_matrix((obs.vals, (obs.rows, obs.cols)), shape=(obs.m, obs.n))


def truncated_svd(
    obs: ObservedMatrix,
    r: int,
    tol: float = 1e-9,
    max_iters: int = 300,
    seed=0,
    oversample: int = 8,
) -> SvdTriple:
    """Top-r singular triple of the sparse observation matrix.

    Block subspace iteration with Rayleigh-Ritz extraction from a seeded
    random start. Converged once every returned vector satisfies
    ||A^T A v - s^2 v|| <= tol * s_1^2; otherwise a ConvergenceWarning is
    issued and the best iterate is returned. Asking for r beyond the
    numerical rank simply yields trailing near-zero singular values.
    """
    if obs.nnz == 0:
        raise ValueError("observation set is empty")
    if not 1 <= r <= min(obs.m, obs.n):
        raise ValueError(f"rank must be in [1, {min(obs.m, obs.n)}], got {r}")
    if max_iters < 1:
        raise ValueError("max_iters must be at least 1")
    A = _operator(obs)
    b = min(min(obs.m, obs.n), r + oversample)
    rng = np.random.default_rng(seed)
    Q = _qf(rng.standard_normal((obs.n, b)))
    AQ = A @ Q
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        U = _qf(AQ)
        Q = _qf(A.T @ U)
        AQ = A @ Q
        P, s, Wt = np.linalg.svd(U.T @ AQ)
        V_r = Q @ Wt[:r].T
        AV = AQ @ Wt[:r].T
        resid = A.T @ AV - V_r * s[:r] ** 2
        if np.max(np.linalg.norm(resid, axis=0)) <= tol * max(s[0] ** 2, np.finfo(float).tiny):
            converged = True
            break
    if not converged:
        warnings.warn(
            f"subspace iteration did not converge in {max_iters} iterations",
            ConvergenceWarning,
            stacklevel=2,
        )
    U_r = U @ P[:, :r]
    U_r, V_r = _fix_signs(U_r, V_r)
    return SvdTriple(left=U_r, singulars=s[:r].copy(), right=V_r, converged=converged, iterations=it)


def spectral_estimate(
    obs_trimmed: ObservedMatrix,
    r: int,
    lam: float = 0.0,
    tol: float = 1e-9,
    max_iters: int = 300,
    seed=0,
) -> Factorization:
    """Rank-r spectral reconstruction with singular values scaled by 1/(1+lam).

    Callers are expected to trim the observation set first; this function
    works on whatever index set it is given.
    """
    if lam <= -1:
        raise ValueError(f"lam must exceed -1, got {lam}")
    svd = truncated_svd(obs_trimmed, r, tol=tol, max_iters=max_iters, seed=seed)
    return Factorization(X=svd.left, S=np.diag(svd.singulars / (1.0 + lam)), Y=svd.right)


def soft_impute_baseline(
    obs: ObservedMatrix,
    lam_nn: float,
    tol: float = 1e-6,
    max_iters: int = 500,
) -> np.ndarray:
    """Iterative singular-value soft thresholding completion baseline.

    Repeats Z <- SVT_{lam_nn}(P_E(N) + P_Eperp(Z)) from Z = 0 until the
    relative Frobenius change of successive iterates drops below tol.
    """
    if obs.nnz == 0:
        raise ValueError("observation set is empty")
    if lam_nn < 0:
        raise ValueError("nuclear-norm threshold must be nonnegative")
    ne = obs.to_dense()
    observed = obs.mask()
    Z = np.zeros_like(ne)
    for _ in range(max_iters):
        target = np.where(observed, ne, Z)
        U, s, Vt = np.linalg.svd(target, full_matrices=False)
        s = np.maximum(s - lam_nn, 0.0)
        Z_new = (U * s) @ Vt
        delta = np.linalg.norm(Z_new - Z)
        if delta <= tol * max(np.linalg.norm(Z), np.finfo(float).tiny):
            return Z_new
        Z = Z_new
    warnings.warn(
        f"soft-impute did not converge in {max_iters} iterations",
        ConvergenceWarning,
        stacklevel=2,
    )
    return Z

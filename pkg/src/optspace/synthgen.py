"""Synthetic low-rank-plus-noise instances and the error metrics.

The generator draws a rank-r ground truth M, adds dense Gaussian noise whose
entry variance is sqrt(m*n)*sigma2, and reveals each entry independently with
probability p. Two signal models are supported:

* recipe (default): M = Ubar @ Vbar.T with i.i.d. standard normal factors,
  the standard benchmark construction; its normalized spectrum is random.
* exact spectrum: pass `spectrum` (normalized singular values) to plant
  M = Q_u diag(spectrum * sqrt(m*n)) Q_v.T with Haar-ish orthonormal frames,
  so the theory parameters are exact rather than empirical.

Each matrix (U, V, W, mask) is drawn from its own substream spawned from the
seed, in that order, so instances are reproducible cell by cell in parallel
sweeps.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .obsmat import ObservedMatrix, write_coordinate, write_dense
from .theory import ModelParams

__all__ = [
    "SynthInstance",
    "generate",
    "snr_to_sigma2",
    "test_error",
    "train_error",
    "rel_fro_error",
    "save_instance",
]


@dataclasses.dataclass(frozen=True)
class SynthInstance:
    """One generated instance: ground truth, noise, observations, parameters.

    U0 and V0 are orthonormal frames spanning the row/column space of M
    (columns ordered by singular value); overlap measurements against
    empirical singular vectors use them directly.
    """

    M: np.ndarray
    W: np.ndarray
    observed: ObservedMatrix
    params: ModelParams
    seed: int
    U0: np.ndarray
    V0: np.ndarray


def snr_to_sigma2(snr: float, r: int, m: int, n: int) -> float:
    """Noise scale giving the requested entrywise signal-to-noise ratio.

    With standard normal factors Var(M_ij) = r and Var(W_ij) = sqrt(m*n)*sigma2,
    so SNR = sqrt(r / (sigma2*sqrt(m*n))).
    """
    if snr <= 0:
        raise ValueError("snr must be positive")
    return r / (snr**2 * np.sqrt(m * n))


def _orthonormal(rng, dim: int, r: int) -> np.ndarray:
    q, _ = np.linalg.qr(rng.standard_normal((dim, r)))
    return q


def generate(
    m: int,
    n: int,
    r: int,
    sigma2: float,
    p: float,
    seed,
    spectrum=None,
    mask_mode: str = "bernoulli",
) -> SynthInstance:
    """Draw one instance of the planted model.

    Args:
        m, n, r: shape and signal rank, r <= min(m, n).
        sigma2: noise scale; entry variance is sqrt(m*n)*sigma2.
        p: observation probability in (0, 1].
        seed: integer or numpy SeedSequence.
        spectrum: optional normalized singular values (length r) for an
            exact-spectrum signal instead of the Gaussian-factor recipe.
        mask_mode: "bernoulli" reveals each entry independently with
            probability p; "fixed" reveals exactly round(p*m*n) entries
            drawn uniformly without replacement.
    """
    if m < 1 or n < 1 or r < 1 or r > min(m, n):
        raise ValueError(f"invalid dimensions m={m} n={n} r={r}")
    if not 0 < p <= 1:
        raise ValueError(f"observation probability must be in (0,1], got {p}")
    if sigma2 < 0:
        raise ValueError("sigma2 must be nonnegative")

    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    s_u, s_v, s_w, s_mask = ss.spawn(4)
    rng_u = np.random.default_rng(s_u)
    rng_v = np.random.default_rng(s_v)

    scale = np.sqrt(m * n)
    if spectrum is None:
        ubar = rng_u.standard_normal((m, r))
        vbar = rng_v.standard_normal((n, r))
        M = ubar @ vbar.T
        # exact singular values from the thin factors, no dense SVD needed
        qu, ru = np.linalg.qr(ubar)
        qv, rv = np.linalg.qr(vbar)
        pu, svals, pvt = np.linalg.svd(ru @ rv.T)
        U0 = qu @ pu
        V0 = qv @ pvt.T
        sigma_diag = svals / scale
    else:
        sigma_diag = np.atleast_1d(np.asarray(spectrum, dtype=float))
        if sigma_diag.shape != (r,):
            raise ValueError(f"spectrum must have length r={r}")
        U0 = _orthonormal(rng_u, m, r)
        V0 = _orthonormal(rng_v, n, r)
        M = (U0 * (sigma_diag * scale)) @ V0.T

    W = np.sqrt(sigma2) * (m * n) ** 0.25 * np.random.default_rng(s_w).standard_normal((m, n))

    rng_mask = np.random.default_rng(s_mask)
    if mask_mode == "bernoulli":
        flat = np.flatnonzero(rng_mask.random(m * n) < p)
    elif mask_mode == "fixed":
        count = int(round(p * m * n))
        flat = rng_mask.choice(m * n, size=count, replace=False)
    else:
        raise ValueError(f"unknown mask_mode {mask_mode!r}")
    rows, cols = np.divmod(flat, n)
    N = M + W
    observed = ObservedMatrix(m, n, rows, cols, N[rows, cols])

    params = ModelParams(r=r, sigma_diag=sigma_diag, sigma2=sigma2, p=p, alpha=m / n)
    seed_int = seed if isinstance(seed, (int, np.integer)) else -1
    return SynthInstance(M=M, W=W, observed=observed, params=params, seed=int(seed_int), U0=U0, V0=V0)


def test_error(M_true: np.ndarray, M_hat: np.ndarray, mask: ObservedMatrix) -> float:
    """Squared-error ratio on the unobserved positions."""
    M_true = np.asarray(M_true, dtype=float)
    M_hat = np.asarray(M_hat, dtype=float)
    if M_true.shape != (mask.m, mask.n) or M_hat.shape != (mask.m, mask.n):
        raise ValueError("shape mismatch between matrices and mask")
    unobs = ~mask.mask()
    den = np.sum(M_true[unobs] ** 2)
    if not unobs.any() or den == 0:
        raise ValueError("unobserved complement is empty or has zero norm")
    return float(np.sum((M_true[unobs] - M_hat[unobs]) ** 2) / den)


def train_error(N_obs: ObservedMatrix, M_hat: np.ndarray) -> float:
    """Squared-error ratio on the observed positions."""
    M_hat = np.asarray(M_hat, dtype=float)
    if M_hat.shape != (N_obs.m, N_obs.n):
        raise ValueError("shape mismatch between prediction and observations")
    den = np.sum(N_obs.vals**2)
    if N_obs.nnz == 0 or den == 0:
        raise ValueError("observed set is empty or has zero norm")
    pred = M_hat[N_obs.rows, N_obs.cols]
    return float(np.sum((N_obs.vals - pred) ** 2) / den)


def rel_fro_error(M_true: np.ndarray, M_hat: np.ndarray) -> float:
    """||M_hat - M_true||_F^2 / ||M_true||_F^2."""
    M_true = np.asarray(M_true, dtype=float)
    den = np.sum(M_true**2)
    if den == 0:
        raise ValueError("reference matrix has zero norm")
    return float(np.sum((np.asarray(M_hat, dtype=float) - M_true) ** 2) / den)


def save_instance(inst: SynthInstance, prefix: str) -> None:
    """Persist observations (coordinate), dense truth/noise (array) and a
    key=value metadata sidecar under the given path prefix."""
    write_coordinate(inst.observed, f"{prefix}.obs.mtx")
    write_dense(inst.M, f"{prefix}.truth.mtx")
    write_dense(inst.W, f"{prefix}.noise.mtx")
    p = inst.params
    snr = np.sqrt(p.r / (p.sigma2 * np.sqrt(inst.M.shape[0] * inst.M.shape[1]))) if p.sigma2 > 0 else float("inf")
    with open(f"{prefix}.meta", "w", encoding="ascii") as fh:
        for key, val in [
            ("m", inst.M.shape[0]),
            ("n", inst.M.shape[1]),
            ("r", p.r),
            ("sigma2", f"{p.sigma2:.17g}"),
            ("p", f"{p.p:.17g}"),
            ("seed", inst.seed),
            ("snr", f"{snr:.17g}"),
        ]:
            fh.write(f"{key} = {val}\n")

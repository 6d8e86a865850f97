"""Closed-form asymptotics for the shrunken spectral estimator.

For a rank-r signal with normalized spectrum Sigma (singular values of the
ground truth divided by sqrt(m*n)), entrywise noise of variance sqrt(m*n)*sigma2
and independent observation probability p, the top singular values of the
observed matrix (scaled by 1/n) and the alignment of its singular vectors with
the truth converge to deterministic limits as n -> infinity with m/n -> alpha.
This module evaluates those limits, the relative mean-square error of the
optimally shrunk rank-r spectral reconstruction, and the optimal shrinkage
factor itself.

A mode i is recoverable iff Sigma_i**2 > sigma2/p; below that threshold its
empirical singular value sticks to the noise-bulk edge and the overlaps vanish.
"""

from __future__ import annotations

import dataclasses

import numpy as np

__all__ = [
    "ModelParams",
    "TheoryPrediction",
    "threshold_rank",
    "bulk_edge",
    "predict_singular_values",
    "predict_overlaps",
    "predict_rel_mse",
    "rel_mse_from_limits",
    "mp_density",
    "theory_lambda",
    "predict",
]


@dataclasses.dataclass(frozen=True)
class ModelParams:
    """Spectral description of a planted low-rank-plus-noise model.

    sigma_diag holds the normalized signal singular values (nonincreasing,
    positive), sigma2 the noise scale (entry variance is sqrt(m*n)*sigma2),
    p the observation probability and alpha = m/n the aspect ratio. m_max
    optionally records an entrywise bound on the signal, used only for
    applicability notes.
    """

    r: int
    sigma_diag: np.ndarray
    sigma2: float
    p: float
    alpha: float
    m_max: float | None = None

    def __post_init__(self):
        sd = np.atleast_1d(np.asarray(self.sigma_diag, dtype=float))
        if self.r < 1 or sd.shape != (self.r,):
            raise ValueError(f"sigma_diag must have shape ({self.r},)")
        if np.any(sd <= 0):
            raise ValueError("signal singular values must be positive")
        if np.any(np.diff(sd) > 0):
            raise ValueError("signal singular values must be nonincreasing")
        if not 0 < self.p <= 1:
            raise ValueError(f"observation probability must be in (0,1], got {self.p}")
        if self.alpha <= 0:
            raise ValueError("aspect ratio must be positive")
        if self.sigma2 < 0:
            raise ValueError("noise scale must be nonnegative")
        object.__setattr__(self, "sigma_diag", sd)


@dataclasses.dataclass(frozen=True)
class TheoryPrediction:
    """Bundle of asymptotic predictions for one parameter point."""

    z: np.ndarray
    a: np.ndarray
    b: np.ndarray
    k: int
    rel_mse: float
    bulk_edge: float

    def as_items(self):
        """Flat (key, value) pairs, lists joined for one-line reporting."""
        join = lambda v: ";".join(f"{x:.17g}" for x in v)
        return [
            ("threshold_rank", str(self.k)),
            ("bulk_edge", f"{self.bulk_edge:.17g}"),
            ("rel_mse", f"{self.rel_mse:.17g}"),
            ("z", join(self.z)),
            ("a", join(self.a)),
            ("b", join(self.b)),
        ]


def _noise_to_signal(params: ModelParams) -> np.ndarray:
    # x_i = sigma2 / (p * Sigma_i^2), the per-mode noise-to-signal ratio
    return params.sigma2 / (params.p * params.sigma_diag**2)


def threshold_rank(params: ModelParams) -> int:
    """Number of recoverable modes: largest k with Sigma_k**2 > sigma2/p."""
    above = params.sigma_diag**2 > params.sigma2 / params.p
    return int(np.sum(above))


def bulk_edge(params: ModelParams) -> float:
    """Top edge of the noise-only singular value bulk, in units of 1/n."""
    al = params.alpha
    return float(
        np.sqrt(params.sigma2) * np.sqrt(params.p * np.sqrt(al)) * (1 + np.sqrt(al))
    )


def _z_expression(params: ModelParams) -> np.ndarray:
    """Spike singular-value expression evaluated at every mode.

    Only meaningful above threshold; below threshold the observable value is
    the bulk edge, but this analytic continuation is what makes the rel-MSE
    forms agree algebraically (see rel_mse_from_limits).
    """
    al = params.alpha
    x = _noise_to_signal(params)
    rad = al * (x + 1 / np.sqrt(al)) * (x + np.sqrt(al))
    return params.p * params.sigma_diag * np.sqrt(rad)


def predict_singular_values(params: ModelParams) -> np.ndarray:
    """Limits of the top-r singular values of the observed matrix over n.

    Above-threshold modes follow the spiked formula; the rest stick to the
    bulk edge.
    """
    k = threshold_rank(params)
    z = _z_expression(params)
    z[k:] = bulk_edge(params)
    return z


def predict_overlaps(params: ModelParams) -> tuple[np.ndarray, np.ndarray]:
    """Limiting left/right alignments (a_i, b_i) of empirical singular vectors.

    a_i is the cosine between the i-th true left direction and the i-th
    empirical left singular vector (rotation within degenerate blocks is not
    pinned down, so only the singular values of the overlap matrix are
    comparable to data). Zero below threshold.
    """
    k = threshold_rank(params)
    x = _noise_to_signal(params)
    al = params.alpha
    num = 1 - x**2
    a2 = num / (1 + np.sqrt(al) * x)
    b2 = num / (1 + x / np.sqrt(al))
    a = np.sqrt(np.clip(a2, 0.0, None))
    b = np.sqrt(np.clip(b2, 0.0, None))
    a[k:] = 0.0
    b[k:] = 0.0
    return a, b


def predict_rel_mse(params: ModelParams) -> float:
    """Asymptotic ||Mhat - M||_F^2 / ||M||_F^2 at the optimal shrinkage.

    Evaluates

        1 - { sum_k Sigma_k^2 (1 - x_k^2)_+ }^2
            / ( ||Sigma||_F^2 * sum_k Sigma_k^2 (1 + sqrt(a) x_k)(1 + x_k/sqrt(a)) )

    with x_k = sigma2/(p Sigma_k^2). Equals 1 once every mode is below
    threshold: the observations are then useless.
    """
    x = _noise_to_signal(params)
    s2 = params.sigma_diag**2
    al = params.alpha
    num = np.sum(s2 * np.clip(1 - x**2, 0.0, None)) ** 2
    den = np.sum(s2) * np.sum(s2 * (1 + np.sqrt(al) * x) * (1 + x / np.sqrt(al)))
    return float(1 - num / den)


def rel_mse_from_limits(params: ModelParams) -> float:
    """Relative MSE recomposed from the z/a/b limits.

    1 - (sum_{k<=K} Sigma_k a_k b_k z_k)^2 / (||Sigma||_F^2 ||z||^2), with the
    spike expression continued below threshold inside ||z||^2. Algebraically
    identical to predict_rel_mse; kept as an independent arithmetic route for
    consistency checks.
    """
    a, b = predict_overlaps(params)
    z = _z_expression(params)
    dz = np.sum(params.sigma_diag * a * b * z)
    return float(1 - dz**2 / (np.sum(params.sigma_diag**2) * np.sum(z**2)))


def mp_density(lam, alpha: float):
    """Density of the limiting noise singular-value-squared law.

    Support is [c_-^2, c_+^2] with c_+- = 1 +- alpha**(-1/2); zero outside.
    Integrates to 1 for alpha >= 1 (for alpha < 1 the law has an extra atom
    at zero of mass 1 - alpha, not represented here).
    """
    if alpha <= 0:
        raise ValueError("aspect ratio must be positive")
    lam = np.asarray(lam, dtype=float)
    lo = (1 - alpha ** (-0.5)) ** 2
    hi = (1 + alpha ** (-0.5)) ** 2
    inside = (lam > lo) & (lam < hi)
    out = np.zeros_like(lam)
    lam_in = lam[inside]
    out[inside] = alpha * np.sqrt((lam_in - lo) * (hi - lam_in)) / (2 * np.pi * lam_in)
    return out if out.ndim else float(out)


def theory_lambda(params: ModelParams) -> tuple[float, float]:
    """Asymptotically optimal shrinkage t* and the matching lambda*.

    The rank-r spectral reconstruction scaled by a single factor t has
    asymptotic error ||Sigma||^2 - 2 t (sum Sigma_k a_k b_k z_k)/sqrt(alpha)
    + t^2 ||z||^2 / alpha, minimized at

        t* = sqrt(alpha) * (sum_{k<=K} Sigma_k a_k b_k z_k) / ||z||^2 .

    lambda* = 1/t* - 1 may be negative: with missing entries the raw spectral
    step underestimates the signal by roughly p and the optimal correction
    amplifies. Raises when no mode is above threshold (t* would be 0, no
    useful reconstruction exists).
    """
    k = threshold_rank(params)
    if k == 0:
        raise ValueError("all modes below threshold: observations carry no signal")
    a, b = predict_overlaps(params)
    z = predict_singular_values(params)
    t_star = float(np.sqrt(params.alpha) * np.sum(params.sigma_diag * a * b * z) / np.sum(z**2))
    return t_star, 1.0 / t_star - 1.0


def predict(params: ModelParams) -> TheoryPrediction:
    """All predictions for one parameter point."""
    a, b = predict_overlaps(params)
    return TheoryPrediction(
        z=predict_singular_values(params),
        a=a,
        b=b,
        k=threshold_rank(params),
        rel_mse=predict_rel_mse(params),
        bulk_edge=bulk_edge(params),
    )

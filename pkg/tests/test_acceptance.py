"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines. The heavyweight Monte-Carlo fixtures are shared across criteria.
"""

import time
import warnings

import numpy as np
import pytest
import scipy.integrate

from optspace.harness import ExperimentConfig, run
from optspace.manifold import cost, riemannian_gradient
from optspace.obsmat import ObservedMatrix, trim
from optspace.spectral import ConvergenceWarning, spectral_estimate, truncated_svd
from optspace.synthgen import generate, rel_fro_error, snr_to_sigma2
from optspace.theory import (
    ModelParams,
    mp_density,
    predict_rel_mse,
    rel_mse_from_limits,
    theory_lambda,
    threshold_rank,
)
from optspace import run_optspace, reconstruct


def _report(num, name, passed, detail=""):
    line = f"[acceptance {num:02d}] {name}: {'PASS' if passed else 'FAIL'}"
    if detail:
        line += f"  ({detail})"
    print("\n" + line)
    assert passed, line


def _spike_params(sig, sigma2=1.0, p=1.0, alpha=1.0):
    return ModelParams(r=1, sigma_diag=np.array([sig]), sigma2=sigma2, p=p, alpha=alpha)


def _measure_spike(sig, sigma2, seeds, rank=1):
    """Generate n=1000 spiked instances and take the top singular triple."""
    out = []
    for seed in seeds:
        inst = generate(1000, 1000, rank, sigma2, 1.0, seed=seed, spectrum=[sig] * rank)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            svd = truncated_svd(trim(inst.observed), rank, tol=1e-5, max_iters=300, seed=seed)
        out.append((inst, svd))
    return out


@pytest.fixture(scope="module")
def spike_above_threshold():
    # Sigma_1 = sqrt(2), sigma2 = 1, p = 1: z = 3/sqrt(2), a = b = 1/sqrt(2)
    return _measure_spike(np.sqrt(2), 1.0, seeds=range(100, 105))


def test_criterion_01_spectral_closed_form():
    worst = 0.0
    for seed in range(10):
        inst = generate(20, 15, 3, 0.4, 0.7, seed=seed)
        ne = inst.observed.to_dense()
        facts = {lam: spectral_estimate(inst.observed, 3, lam=lam) for lam in (0.0, 0.5, 2.0)}
        for lam, fact in facts.items():
            # oracle: ridge least squares over the core with the frames fixed
            design = (fact.X[:, None, :, None] * fact.Y[None, :, None, :]).reshape(300, 9)
            design = np.vstack([design, np.sqrt(lam) * np.eye(9)])
            target = np.concatenate([ne.reshape(-1), np.zeros(9)])
            s_opt, *_ = np.linalg.lstsq(design, target, rcond=None)
            worst = max(worst, np.linalg.norm(fact.S.reshape(-1) - s_opt))
        for lam in (0.5, 2.0):
            scale_err = np.linalg.norm(facts[lam].S * (1 + lam) - facts[0.0].S)
            worst = max(worst, scale_err)
    _report(1, "spectral step closed form", worst < 1e-8, f"worst deviation {worst:.2e}")


def test_criterion_02_gradient_correctness():
    h = 1e-6
    worst_rel, worst_tan = 0.0, 0.0
    rng = np.random.default_rng(7)
    for seed in range(5):
        inst = generate(12, 10, 2, 0.3, 0.7, seed=seed)
        x, _ = np.linalg.qr(rng.standard_normal((12, 2)))
        y, _ = np.linalg.qr(rng.standard_normal((10, 2)))
        s = rng.standard_normal((2, 2))
        lam = 0.4
        gx, gy = riemannian_gradient(x, y, s, inst.observed, lam)
        worst_tan = max(
            worst_tan,
            np.linalg.norm(0.5 * (x.T @ gx + gx.T @ x)),
            np.linalg.norm(0.5 * (y.T @ gy + gy.T @ y)),
        )
        for _ in range(20):
            tx = rng.standard_normal(x.shape)
            tx = tx - x @ (0.5 * (x.T @ tx + tx.T @ x))
            ty = rng.standard_normal(y.shape)
            ty = ty - y @ (0.5 * (y.T @ ty + ty.T @ y))
            norm = np.sqrt(np.sum(tx * tx) + np.sum(ty * ty))
            tx, ty = tx / norm, ty / norm
            fd = (
                cost(x + h * tx, y + h * ty, s, inst.observed, lam)
                - cost(x - h * tx, y - h * ty, s, inst.observed, lam)
            ) / (2 * h)
            an = np.sum(gx * tx) + np.sum(gy * ty)
            worst_rel = max(worst_rel, abs(an - fd) / max(abs(fd), 1e-12))
    ok = worst_rel < 1e-5 and worst_tan < 1e-10
    _report(2, "gradient vs finite differences", ok, f"rel {worst_rel:.2e}, tangency {worst_tan:.2e}")


def test_criterion_03_noiseless_exact_recovery():
    started = time.time()
    hits = 0
    errs = []
    for seed in range(10):
        inst = generate(400, 400, 3, 0.0, 0.3, seed=seed)
        fact, _ = run_optspace(inst.observed, 3, 0.0, 0.0, seed=seed)
        err = rel_fro_error(inst.M, reconstruct(fact))
        errs.append(err)
        hits += err < 1e-3
    elapsed = time.time() - started
    _report(
        3,
        "noiseless exact recovery",
        hits >= 9,
        f"{hits}/10 seeds below 1e-3, median {np.median(errs):.1e}, {elapsed:.0f}s",
    )


def test_criterion_04_singular_value_law(spike_above_threshold):
    z_above = np.mean([svd.singulars[0] / 1000 for _, svd in spike_above_threshold])
    target_above = 3 / np.sqrt(2)

    below = _measure_spike(np.sqrt(0.5), 1.0, seeds=range(200, 205))
    z_below = np.mean([svd.singulars[0] / 1000 for _, svd in below])

    err_above = abs(z_above - target_above) / target_above
    err_below = abs(z_below - 2.0) / 2.0
    ok = err_above < 0.03 and err_below < 0.03
    _report(
        4,
        "top singular value law",
        ok,
        f"above {z_above:.4f} vs {target_above:.4f} ({err_above:.1%}); below {z_below:.4f} vs 2 ({err_below:.1%})",
    )


def test_criterion_05_overlap_law(spike_above_threshold):
    overlaps = [
        np.linalg.svd(inst.U0.T @ svd.left, compute_uv=False)[0]
        for inst, svd in spike_above_threshold
    ]
    a_meas = np.mean(overlaps)
    target = 1 / np.sqrt(2)
    err = abs(a_meas - target) / target
    _report(5, "singular vector overlap law", err < 0.05, f"{a_meas:.4f} vs {target:.4f} ({err:.1%})")


def test_criterion_06_relative_mse_at_theory_shrinkage(spike_above_threshold):
    params = _spike_params(np.sqrt(2))
    t_star, _ = theory_lambda(params)
    assert t_star == pytest.approx(1 / 3, rel=1e-12)
    errs = []
    for inst, svd in spike_above_threshold:
        m_hat = (svd.left * (t_star * svd.singulars)) @ svd.right.T
        errs.append(rel_fro_error(inst.M, m_hat))
    measured = np.mean(errs)
    err = abs(measured - 0.75) / 0.75
    _report(6, "relative MSE at optimal shrinkage", err < 0.05, f"{measured:.4f} vs 0.75 ({err:.1%})")


def test_criterion_07_phase_transition():
    sig = np.sqrt(2)
    results = []
    for ratio in (0.25, 0.5, 0.8, 1.2, 1.5):
        sigma2 = ratio * sig**2
        params = _spike_params(sig, sigma2=sigma2)
        predicted = predict_rel_mse(params)
        k = threshold_rank(params)
        t_star = theory_lambda(params)[0] if k > 0 else 0.0
        measured = []
        for inst, svd in _measure_spike(sig, sigma2, seeds=range(300, 303)):
            m_hat = (svd.left * (t_star * svd.singulars)) @ svd.right.T
            measured.append(rel_fro_error(inst.M, m_hat))
        results.append((ratio, float(np.mean(measured)), predicted))
    deviations = [abs(m - p) for _, m, p in results]
    supercritical_ok = all(abs(m - 1.0) <= 0.05 for r, m, _ in results if r > 1.0)
    ok = max(deviations) <= 0.05 and supercritical_ok
    detail = "; ".join(f"x={r}: {m:.3f} vs {p:.3f}" for r, m, p in results)
    _report(7, "noise/observation phase transition", ok, detail)


def test_criterion_08_regularization_improves_test_error():
    started = time.time()
    config = ExperimentConfig(
        kind="sweep_rank",
        m=[100],
        n=[100],
        r_true=[10],
        rank_used=list(range(1, 21)),
        p=[0.5],
        snr=[1.0],
        lam=["auto", 0.0],
        replicates=20,
        seed=20250810,
        holdout_fraction=0.1,
        max_iters=40,
        cost_rel_tol=1e-7,
    )
    assert snr_to_sigma2(1.0, 10, 100, 100) == pytest.approx(0.1)
    rows = run(config)
    assert all(row.status == "ok" for row in rows)

    sums = {}
    for row in rows:
        key = (row.rank_used, row.lam_requested)
        sums.setdefault(key, []).append(row.test_error)
    means = {key: float(np.mean(v)) for key, v in sums.items()}
    ordered = all(means[(rk, "auto")] <= means[(rk, "0.0")] + 1e-12 for rk in range(1, 21))
    strict = all(means[(rk, "auto")] < means[(rk, "0.0")] for rk in range(10, 21))
    elapsed = time.time() - started
    gains = [means[(rk, "0.0")] / means[(rk, "auto")] for rk in range(10, 21)]
    _report(
        8,
        "regularization improves test error",
        ordered and strict,
        f"every rank ordered, min gain at rank>=10 is {min(gains):.2f}x, {elapsed:.0f}s",
    )


def test_criterion_09_internal_theory_consistency():
    rng = np.random.default_rng(42)
    worst = 0.0
    count = 0
    for _ in range(100):
        r = int(rng.integers(1, 6))
        sd = np.sort(rng.uniform(0.2, 3.0, size=r))[::-1]
        prm = ModelParams(
            r=r,
            sigma_diag=sd,
            sigma2=float(rng.uniform(0.0, 3.0)),
            p=float(rng.uniform(0.2, 1.0)),
            alpha=float(rng.choice([0.5, 1.0, 2.0, 4.0])),
        )
        worst = max(worst, abs(predict_rel_mse(prm) - rel_mse_from_limits(prm)))
        count += 1
    assert count == 100

    mp_err = 0.0
    for alpha in (1.0, 2.0, 4.0):
        lo, hi = (1 - alpha**-0.5) ** 2, (1 + alpha**-0.5) ** 2
        total, _ = scipy.integrate.quad(lambda x: mp_density(x, alpha), lo, hi, limit=200)
        mp_err = max(mp_err, abs(total - 1.0))
    ok = worst <= 1e-12 and mp_err <= 1e-6
    _report(9, "theory internal consistency", ok, f"forms agree to {worst:.1e}, MP mass err {mp_err:.1e}")


def test_criterion_10_sweep_determinism(tmp_path):
    config_text = (
        "kind = sweep_rank\nm = 30\nn = 24\nr_true = 2\nrank_used = 2\nrank_used = 3\n"
        "p = 0.6\nsigma2 = 0.05\nlambda = auto\nlambda = 0\nreplicates = 2\nseed = 99\n"
        "holdout_fraction = 0.2\nmax_iters = 12\n"
    )
    from optspace.harness import parse_config

    paths = [tmp_path / "run1.csv", tmp_path / "run2.csv"]
    for path in paths:
        cfg = parse_config(config_text)
        cfg.output = str(path)
        run(cfg)
    identical = paths[0].read_bytes() == paths[1].read_bytes()
    _report(10, "sweep rerun determinism", identical, f"{len(paths[0].read_bytes())} bytes compared")

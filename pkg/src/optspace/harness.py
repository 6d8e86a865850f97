"""Experiment runner: parameter sweeps, holdout lambda selection, CSV output.

Configs are flat key=value text where repeating a key builds a grid; a run
produces one row per grid cell and replicate, written incrementally and
reproducible byte for byte from the base seed. Each cell derives its random
stream from the base seed, the data-generating coordinates and the replicate
index, so cells that differ only in fitting choices see identical data.
"""

from __future__ import annotations

import dataclasses
import itertools
import os
import time
import warnings

import numpy as np
import threadpoolctl

from . import theory
from .manifold import DescentOptions, DescentTrace, descend
from .obsmat import ObservedMatrix, split_holdout, trim
from .spectral import (
    ConvergenceWarning,
    Factorization,
    reconstruct,
    soft_impute_baseline,
    spectral_estimate,
    truncated_svd,
)
from .synthgen import generate, rel_fro_error, snr_to_sigma2, test_error, train_error

__all__ = [
    "ExperimentConfig",
    "ResultRow",
    "parse_config",
    "read_config_file",
    "default_lambda_grid",
    "run_optspace",
    "select_lambda",
    "run",
    "emit_csv",
    "emit_plotscript",
    "load_rows",
    "CSV_COLUMNS",
]

KINDS = ("sweep_rank", "sweep_noise", "sweep_lambda", "theory_check", "single_run")
METHODS = ("optspace", "soft_impute")

# sweep cells use a cheaper spectral start than the library defaults; the
# descent refit makes the extra precision pointless there
_SWEEP_SVD_TOL = 1e-6
_SWEEP_SVD_ITERS = 80
# holdout selection ranks candidates by score gaps of tens of percent; it
# converges its verdict long before the final fit would
_SELECT_MAX_ITERS = 25


class _RunCache:
    """Within-run memoization of instances and spectral starts.

    Cells that differ only in fitting choices (rank, lam, method) share the
    same generated instance; caching keeps paired comparisons from paying for
    identical generation and SVD work twice. Values are deterministic, so
    hits and misses produce byte-identical results.
    """

    _MAX_INSTANCE_CELLS = 200_000  # dense m*n budget per cached instance

    def __init__(self):
        self._instances = {}
        self._svds = {}

    def instance(self, key, maker):
        if key in self._instances:
            return self._instances[key]
        value = maker()
        if value.M.size <= self._MAX_INSTANCE_CELLS and len(self._instances) < 64:
            self._instances[key] = value
        return value

    def svd(self, key, maker):
        if key in self._svds:
            return self._svds[key]
        value = maker()
        if len(self._svds) < 256:
            self._svds[key] = value
        return value


@dataclasses.dataclass
class ExperimentConfig:
    kind: str
    m: list
    n: list
    r_true: list
    rank_used: list
    p: list
    sigma2: list | None = None
    snr: list | None = None
    lam: list = dataclasses.field(default_factory=lambda: ["auto"])
    method: list = dataclasses.field(default_factory=lambda: ["optspace"])
    spectrum: list | None = None
    mask_mode: str = "bernoulli"
    replicates: int = 20
    seed: int = 0
    holdout_fraction: float = 0.1
    output: str | None = None
    max_iters: int = 500
    cost_rel_tol: float = 1e-9
    grad_tol: float | None = None
    trim_factor: float = 2.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown experiment kind {self.kind!r}")
        if (self.sigma2 is None) == (self.snr is None):
            raise ValueError("exactly one of sigma2 and snr must be given")
        for name in ("m", "n", "r_true", "rank_used", "p", "lam", "method"):
            if not getattr(self, name):
                raise ValueError(f"grid key {name!r} is empty")
        for meth in self.method:
            if meth not in METHODS:
                raise ValueError(f"unknown method {meth!r}")
        if self.replicates < 1:
            raise ValueError("replicates must be at least 1")
        if not 0 <= self.holdout_fraction <= 0.5:
            raise ValueError("holdout_fraction must be in [0, 0.5]")

    def descent_options(self, lam_descent: float) -> DescentOptions:
        return DescentOptions(
            lam=lam_descent,
            max_iters=self.max_iters,
            cost_rel_tol=self.cost_rel_tol,
            grad_tol=self.grad_tol,
        )

    def cells(self) -> list[dict]:
        """Cartesian grid in a fixed, documented order."""
        noise_key = "sigma2" if self.sigma2 is not None else "snr"
        noise_vals = self.sigma2 if self.sigma2 is not None else self.snr
        out = []
        for m, n, r_true, rank_used, p, noise, lam, meth in itertools.product(
            self.m, self.n, self.r_true, self.rank_used, self.p, noise_vals, self.lam, self.method
        ):
            out.append(
                dict(
                    m=int(m),
                    n=int(n),
                    r_true=int(r_true),
                    rank_used=int(rank_used),
                    p=float(p),
                    noise_key=noise_key,
                    noise=float(noise),
                    lam=lam,
                    method=meth,
                )
            )
        return out


_GRID_KEYS = ("m", "n", "r_true", "rank_used", "p", "sigma2", "snr", "lam", "method", "spectrum")
_SCALAR_KEYS = {
    "kind": str,
    "mask_mode": str,
    "replicates": int,
    "seed": int,
    "holdout_fraction": float,
    "output": str,
    "max_iters": int,
    "cost_rel_tol": float,
    "grad_tol": float,
    "trim_factor": float,
}


def parse_config(text: str) -> ExperimentConfig:
    """Parse flat key=value config text; repeated keys form grids."""
    pairs = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key = value, got {raw!r}")
        key, val = (part.strip() for part in line.split("=", 1))
        pairs.append((key, val))

    kwargs: dict = {}
    for key, val in pairs:
        if key == "lambda":
            key = "lam"
        if key in _GRID_KEYS:
            if key == "lam":
                item = val if val == "auto" else float(val)
            elif key == "method":
                item = val
            elif key in ("m", "n", "r_true", "rank_used"):
                item = int(val)
            else:
                item = float(val)
            kwargs.setdefault(key, []).append(item)
        elif key in _SCALAR_KEYS:
            if key in kwargs:
                raise ValueError(f"scalar key {key!r} repeated")
            kwargs[key] = _SCALAR_KEYS[key](val)
        else:
            raise ValueError(f"unknown config key {key!r}")
    return ExperimentConfig(**kwargs)


def read_config_file(path) -> ExperimentConfig:
    with open(path, "r", encoding="ascii") as fh:
        return parse_config(fh.read())


@dataclasses.dataclass
class ResultRow:
    kind: str
    method: str
    cell: int
    replicate: int
    seed: int
    m: int
    n: int
    r_true: int
    rank_used: int
    p: float
    sigma2: float
    snr: float
    lam_requested: str
    lam_spectral: float
    lam_descent: float
    test_error: float
    train_error: float
    rel_fro_error: float
    top_sv_over_n: tuple
    overlap_sv: tuple
    theory_threshold_rank: int
    theory_bulk_edge: float
    theory_rel_mse: float
    theory_z: tuple
    theory_a: tuple
    theory_b: tuple
    theory_t_star: float
    theory_lambda_star: float
    status: str
    wall_time: float


CSV_COLUMNS = [f.name for f in dataclasses.fields(ResultRow) if f.name != "wall_time"]


def default_lambda_grid(params: theory.ModelParams) -> list:
    """Candidate regularization weights bracketing the theory optimum.

    Built from the noise-only part of the optimal shrinkage,
    lam_scale = 1/(p*t_star) - 1 >= 0 (the shrink beyond plain 1/p
    unbiasing), scaled by {1/4, 1/2, 1, 2, 4}, plus the unregularized 0.
    Collapses to [0] in the noiseless case; falls back to a fixed ladder when
    no mode is recoverable.
    """
    try:
        t_star, _ = theory.theory_lambda(params)
        lam_scale = 1.0 / (params.p * t_star) - 1.0
    except ValueError:
        return [0.0, 0.25, 0.5, 1.0, 2.0, 4.0]
    grid = {0.0} | {lam_scale * c for c in (0.25, 0.5, 1.0, 2.0, 4.0)}
    return sorted(g for g in grid if g > -1.0)


def _init_from_svd(svd, lam_spectral: float) -> Factorization:
    if lam_spectral <= -1:
        raise ValueError(f"spectral lam must exceed -1, got {lam_spectral}")
    return Factorization(
        X=svd.left, S=np.diag(svd.singulars / (1.0 + lam_spectral)), Y=svd.right
    )


def run_optspace(
    obs: ObservedMatrix,
    rank_used: int,
    lambda_spectral: float,
    lambda_descent: float,
    opts: DescentOptions | None = None,
    seed=0,
    svd_tol: float = 1e-9,
    svd_max_iters: int = 300,
    trim_factor: float = 2.0,
) -> tuple[Factorization, DescentTrace]:
    """Full pipeline: trim, shrunken spectral start, manifold descent."""
    base = opts if opts is not None else DescentOptions()
    opts = dataclasses.replace(base, lam=lambda_descent)
    stage = "trim"
    try:
        trimmed = trim(obs, factor=trim_factor)
        stage = "spectral"
        init = spectral_estimate(
            trimmed, rank_used, lam=lambda_spectral, tol=svd_tol, max_iters=svd_max_iters, seed=seed
        )
        stage = "descent"
        return descend(init, obs, opts)
    except Exception as exc:
        raise RuntimeError(f"optspace {stage} stage failed: {exc}") from exc


def select_lambda(
    obs: ObservedMatrix,
    rank_used: int,
    lambda_grid,
    holdout_fraction: float,
    seed,
    opts: DescentOptions | None = None,
    svd_tol: float = 1e-9,
    svd_max_iters: int = 300,
    trim_factor: float = 2.0,
) -> tuple[float, list]:
    """Pick the grid value with the smallest holdout squared error.

    The observation set is split once; every candidate trains on the same
    train part from the same spectral frames (only the singular-value scaling
    and the descent ridge weight depend on the candidate). Ties break toward
    the smaller value. Returns (best, table of (lam, score)).
    """
    grid = sorted({float(g) for g in lambda_grid})
    if not grid:
        raise ValueError("lambda grid is empty")
    train, val = split_holdout(obs, holdout_fraction, seed)
    base = opts if opts is not None else DescentOptions()
    svd = truncated_svd(trim(train, factor=trim_factor), rank_used, tol=svd_tol, max_iters=svd_max_iters, seed=seed)

    table = []
    for lam in grid:
        try:
            init = _init_from_svd(svd, lam)
            fact, _ = descend(init, train, dataclasses.replace(base, lam=max(lam, 0.0)))
            pred = np.einsum("ij,ij->i", (fact.X @ fact.S)[val.rows], fact.Y[val.cols])
            score = float(np.sum((val.vals - pred) ** 2))
        except Exception:
            score = float("inf")
        table.append((lam, score))
    best_lam, best_score = min(table, key=lambda t: (t[1], t[0]))
    if not np.isfinite(best_score):
        raise RuntimeError("every candidate lambda failed")
    return best_lam, table


def _instance_seed(base_seed: int, m, n, r_true, p, sigma2, replicate: int) -> int:
    """Seed derived from the data-generating coordinates and replicate only.

    Algorithm coordinates (rank_used, lam, method) are excluded on purpose:
    cells that differ only in how they fit share the same instance, so method
    comparisons are paired and a rank sweep walks one dataset.
    """
    bits = lambda x: int(np.float64(x).view(np.uint64))
    ss = np.random.SeedSequence(
        [int(base_seed), int(m), int(n), int(r_true), bits(p), bits(sigma2), int(replicate)]
    )
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _overlap_singulars(U0, X) -> np.ndarray:
    # rotation-invariant alignment: singular values of the overlap matrix
    return np.linalg.svd(U0.T @ X, compute_uv=False)


def _nan_row(config, cell, cell_index, replicate, seed, status) -> ResultRow:
    nan = float("nan")
    return ResultRow(
        kind=config.kind,
        method=cell["method"],
        cell=cell_index,
        replicate=replicate,
        seed=seed,
        m=cell["m"],
        n=cell["n"],
        r_true=cell["r_true"],
        rank_used=cell["rank_used"],
        p=cell["p"],
        sigma2=nan,
        snr=nan,
        lam_requested=str(cell["lam"]),
        lam_spectral=nan,
        lam_descent=nan,
        test_error=nan,
        train_error=nan,
        rel_fro_error=nan,
        top_sv_over_n=(),
        overlap_sv=(),
        theory_threshold_rank=-1,
        theory_bulk_edge=nan,
        theory_rel_mse=nan,
        theory_z=(),
        theory_a=(),
        theory_b=(),
        theory_t_star=nan,
        theory_lambda_star=nan,
        status=status,
        wall_time=0.0,
    )


def _resolve_noise(cell) -> tuple[float, float]:
    m, n, r_true = cell["m"], cell["n"], cell["r_true"]
    if cell["noise_key"] == "snr":
        snr = cell["noise"]
        return snr_to_sigma2(snr, r_true, m, n), snr
    sigma2 = cell["noise"]
    snr = float(np.sqrt(r_true / (sigma2 * np.sqrt(m * n)))) if sigma2 > 0 else float("inf")
    return sigma2, snr


def _run_cell(
    config: ExperimentConfig, cell: dict, cell_index: int, replicate: int, cache: _RunCache | None = None
) -> ResultRow:
    sigma2, _ = _resolve_noise(cell)
    seed = _instance_seed(
        config.seed, cell["m"], cell["n"], cell["r_true"], cell["p"], sigma2, replicate
    )
    if cache is None:
        cache = _RunCache()
    started = time.perf_counter()
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            row = _run_cell_inner(config, cell, cell_index, replicate, seed, cache)
    except Exception as exc:  # record and continue with the sweep
        row = _nan_row(config, cell, cell_index, replicate, seed, f"error: {exc}")
    row.wall_time = time.perf_counter() - started
    return row


def _run_cell_inner(config, cell, cell_index, replicate, seed, cache) -> ResultRow:
    m, n, r_true, rank_used = cell["m"], cell["n"], cell["r_true"], cell["rank_used"]
    p = cell["p"]
    sigma2, snr = _resolve_noise(cell)

    inst = cache.instance(
        seed,
        lambda: generate(
            m, n, r_true, sigma2, p, seed, spectrum=config.spectrum, mask_mode=config.mask_mode
        ),
    )
    params = inst.params
    k = theory.threshold_rank(params)
    if k > 0:
        t_star, lambda_star = theory.theory_lambda(params)
    else:
        t_star, lambda_star = 0.0, float("nan")

    obs = inst.observed
    svd = cache.svd(
        (seed, rank_used, config.trim_factor),
        lambda: truncated_svd(
            trim(obs, factor=config.trim_factor),
            rank_used,
            seed=seed,
            tol=_SWEEP_SVD_TOL,
            max_iters=_SWEEP_SVD_ITERS,
        ),
    )
    top_sv_over_n = tuple(svd.singulars / n)
    overlap_sv = tuple(_overlap_singulars(inst.U0, svd.left))

    lam = cell["lam"]
    if cell["method"] == "soft_impute":
        if lam == "auto":
            raise ValueError("soft_impute needs a numeric lam (nuclear threshold)")
        m_hat = soft_impute_baseline(obs, float(lam))
        lam_spectral = lam_descent = float(lam)
    elif config.kind == "theory_check":
        # shrunken rank-r spectral reconstruction at the theory optimum
        m_hat = (svd.left * (t_star * svd.singulars)) @ svd.right.T
        lam_spectral = 1.0 / t_star - 1.0 if t_star > 0 else float("inf")
        lam_descent = float("nan")
    else:
        if lam == "auto":
            grid = default_lambda_grid(params)
            base = config.descent_options(0.0)
            lam_value, _ = select_lambda(
                obs,
                rank_used,
                grid,
                config.holdout_fraction,
                seed,
                opts=dataclasses.replace(base, max_iters=min(base.max_iters, _SELECT_MAX_ITERS)),
                trim_factor=config.trim_factor,
                svd_tol=_SWEEP_SVD_TOL,
                svd_max_iters=_SWEEP_SVD_ITERS,
            )
        else:
            lam_value = float(lam)
        lam_spectral = lam_value
        lam_descent = max(lam_value, 0.0)
        init = _init_from_svd(svd, lam_spectral)
        fact, _ = descend(init, obs, config.descent_options(lam_descent))
        m_hat = reconstruct(fact)

    te = test_error(inst.M, m_hat, obs) if obs.nnz < m * n else 0.0
    return ResultRow(
        kind=config.kind,
        method=cell["method"],
        cell=cell_index,
        replicate=replicate,
        seed=seed,
        m=m,
        n=n,
        r_true=r_true,
        rank_used=rank_used,
        p=p,
        sigma2=sigma2,
        snr=snr,
        lam_requested=str(cell["lam"]),
        lam_spectral=float(lam_spectral),
        lam_descent=float(lam_descent),
        test_error=te,
        train_error=train_error(obs, m_hat),
        rel_fro_error=rel_fro_error(inst.M, m_hat),
        top_sv_over_n=top_sv_over_n,
        overlap_sv=overlap_sv,
        theory_threshold_rank=k,
        theory_bulk_edge=theory.bulk_edge(params),
        theory_rel_mse=theory.predict_rel_mse(params),
        theory_z=tuple(theory.predict_singular_values(params)),
        theory_a=tuple(theory.predict_overlaps(params)[0]),
        theory_b=tuple(theory.predict_overlaps(params)[1]),
        theory_t_star=t_star,
        theory_lambda_star=lambda_star,
        status="ok",
        wall_time=0.0,
    )


def run(config: ExperimentConfig) -> list:
    """Execute every (cell, replicate); rows stream to config.output if set.

    BLAS pools are pinned to one thread for the duration: the per-cell
    matrices are far too small for threaded kernels to win, and several BLAS
    builds degrade badly on small problems in constrained containers.
    """
    cells = config.cells()
    rows = []
    fh = open(config.output, "w", encoding="ascii") if config.output else None
    try:
        if fh:
            fh.write(",".join(CSV_COLUMNS) + "\n")
        cache = _RunCache()
        with threadpoolctl.threadpool_limits(limits=1):
            for ci, cell in enumerate(cells):
                for rep in range(config.replicates):
                    row = _run_cell(config, cell, ci, rep, cache)
                    rows.append(row)
                    if fh:
                        fh.write(_format_row(row, CSV_COLUMNS) + "\n")
                        fh.flush()
    finally:
        if fh:
            fh.close()
    return rows


def _fmt(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, tuple):
        return ";".join(f"{v:.17g}" for v in value)
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def _format_row(row: ResultRow, columns) -> str:
    return ",".join(_fmt(getattr(row, c)) for c in columns)


def emit_csv(rows, path, include_timing: bool = False) -> None:
    """Write rows with a stable column order and 17-significant-digit floats.

    wall_time is opt-in: it varies between identical runs and would break
    byte-for-byte reproducibility.
    """
    columns = CSV_COLUMNS + (["wall_time"] if include_timing else [])
    with open(path, "w", encoding="ascii") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(_format_row(row, columns) + "\n")


def load_rows(path) -> list:
    """Read an emitted CSV back into dicts, parsing numeric fields."""
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().strip().split(",")
        out = []
        for line in fh:
            parts = line.rstrip("\n").split(",")
            rec = {}
            for key, raw in zip(header, parts):
                if key in ("kind", "method", "status", "lam_requested"):
                    rec[key] = raw
                elif key in ("top_sv_over_n", "overlap_sv", "theory_z", "theory_a", "theory_b"):
                    rec[key] = tuple(float(x) for x in raw.split(";")) if raw else ()
                elif key in ("cell", "replicate", "seed", "m", "n", "r_true", "rank_used", "theory_threshold_rank"):
                    rec[key] = int(raw)
                else:
                    rec[key] = float(raw)
            out.append(rec)
    return out


def emit_plotscript(rows, path, csv_path=None) -> None:
    """Write a gnuplot script plotting test/train error from the emitted CSV.

    The script references the CSV by a relative path so the pair can move
    together.
    """
    if csv_path is None:
        csv_path = os.path.splitext(str(path))[0] + ".csv"
    rel = os.path.relpath(str(csv_path), os.path.dirname(os.path.abspath(str(path))) or ".")
    kind = rows[0].kind if rows else "sweep_rank"
    xcol = {
        "sweep_rank": "rank_used",
        "sweep_noise": "sigma2",
        "sweep_lambda": "lam_spectral",
        "theory_check": "sigma2",
        "single_run": "rank_used",
    }[kind]
    xi = CSV_COLUMNS.index(xcol) + 1
    te = CSV_COLUMNS.index("test_error") + 1
    tr = CSV_COLUMNS.index("train_error") + 1
    with open(path, "w", encoding="ascii") as fh:
        fh.write("# gnuplot script; run: gnuplot -p this_file\n")
        fh.write("set datafile separator ','\n")
        fh.write(f"set xlabel '{xcol}'\n")
        fh.write("set ylabel 'error'\n")
        fh.write("set key outside\n")
        fh.write(
            f"plot '{rel}' every ::1 using {xi}:{te} with points title 'test error', \\\n"
            f"     '{rel}' every ::1 using {xi}:{tr} with points title 'train error'\n"
        )

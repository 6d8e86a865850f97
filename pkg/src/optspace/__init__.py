"""Regularized spectral matrix completion at desk scale.

Reconstructs a low-rank matrix from noisy partial observations via trimming,
a shrunken rank-r spectral start, and gradient descent over orthonormal
frames, together with closed-form predictions for the accuracy and its
noise/observation phase transition.
"""

from .obsmat import (
    DegreeProfile,
    ObservedMatrix,
    degrees,
    project,
    read_coordinate,
    read_dense,
    split_holdout,
    trim,
    write_coordinate,
    write_dense,
)
from .synthgen import (
    SynthInstance,
    generate,
    rel_fro_error,
    save_instance,
    snr_to_sigma2,
    test_error,
    train_error,
)
from .spectral import (
    ConvergenceWarning,
    Factorization,
    SvdTriple,
    reconstruct,
    soft_impute_baseline,
    spectral_estimate,
    truncated_svd,
)
from .manifold import (
    DescentOptions,
    DescentTrace,
    cost,
    descend,
    riemannian_gradient,
    solve_S,
)
from .theory import (
    ModelParams,
    TheoryPrediction,
    bulk_edge,
    mp_density,
    predict,
    predict_overlaps,
    predict_rel_mse,
    predict_singular_values,
    rel_mse_from_limits,
    theory_lambda,
    threshold_rank,
)
from .harness import (
    ExperimentConfig,
    ResultRow,
    default_lambda_grid,
    emit_csv,
    emit_plotscript,
    load_rows,
    parse_config,
    run,
    run_optspace,
    select_lambda,
)

__version__ = "0.1.0"

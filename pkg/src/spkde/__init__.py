"""Robust kernel density estimation by scaling and projecting."""

__version__ = "0.1.0"

from .kernels import (
    KernelFamily,
    KernelSpec,
    UnsupportedKernelError,
    WeightedDensityEstimate,
    estimate_eval,
    estimate_sample,
    gram_matrix,
    kernel_eval,
    kernel_matrix,
)
from .simplex import is_on_simplex, project_simplex
from .qp import (
    NumericError,
    QpProblem,
    SolveReport,
    build_qp,
    fit_kde,
    fit_spkde,
    kkt_residual,
    solve_pgd,
)
from .oracle import (
    GridDensity,
    GridMismatchError,
    check_assumption_a,
    decontaminate,
    grid_from_estimate,
    lp_distance,
    make_grid,
    mix,
    slice_transform,
)
from .contamination import (
    ContaminationSpec,
    Dataset,
    DatasetError,
    GaussianMixture,
    UniformBox,
    fit_rejkde,
    load_dataset,
    sample_mixture,
    scale_to_unit_cube,
)
from .evaluation import (
    ExperimentReport,
    WilcoxonResult,
    benchmark_run,
    kl_f0_to_fhat,
    kl_fhat_to_f0,
    loocv_bandwidth,
    wilcoxon_signed_rank,
)

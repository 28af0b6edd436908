"""Point-process modelling, MCMC replication, and bagplot-based signal
detection for persistence diagrams."""

__version__ = "0.1.0"

from .diagram import (
    PersistenceDiagram,
    PointSet,
    betti_at,
    from_ppd,
    load_csv,
    load_json,
    save_csv,
    save_json,
    strip_infinite,
    to_ppd,
    vertical_outliers,
)
from .density import (
    Bandwidth,
    GridDensity,
    GridSpec,
    KernelDensity,
    RectangleSampler,
    build_sampler,
    default_grid_spec,
    kde_eval,
    normal_reference_bandwidth,
    restrict_halfplane,
    rule_of_thumb_bandwidth,
    sample_point,
    save_grid_csv,
)
from .model import (
    ConditionalEvaluation,
    FittedModel,
    LegacyParams,
    ModelParams,
    PseudolikelihoodGrids,
    conditional_log_density,
    legacy_hamiltonian,
    load_model,
    local_energy,
    log_pseudolikelihood,
    neighborhoods,
    save_model,
)
from .fit import (
    ALL_MASKS,
    FitResult,
    fit_alpha_theta,
    fit_theta,
    information_criteria,
    param_correlations,
    select_model,
)
from .mcmc import (
    ChainState,
    ReplicationSchedule,
    acceptance_probability,
    log_acceptance_ratio,
    replicate,
    run_chain,
    sweep,
)
from .depth import (
    Bagplot,
    ClusterResult,
    DetectionConfig,
    DetectionReport,
    bagplot,
    calibrate_inflation,
    cluster_diagram,
    convex_hull,
    detect,
    fence_factors,
    point_depths,
    tukey_depth,
)
from .generate import (
    GridFunction,
    GrfSimulator,
    GrfSpec,
    grf_simulate,
    grid_kde,
    h0_persistence,
    h1_persistence_2d,
    sample_circle,
    sample_sphere,
)

__all__ = [name for name in dir() if not name.startswith("_")]

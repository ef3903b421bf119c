"""CIFT: a desk-scale laboratory for counterfactual-intervention feature transfer.

The package trains and probes affinity-graph message passing for cross-modality
retrieval under unbalanced modality distributions: heterogeneous/homogeneous
two-graph transfer with 1-vs-N group simulation, counterfactual-intervention
training of the graph topology, quality metrics for features/affinities, and
the controlled toy experiment relating input, topology and output quality.
"""

from .affinity import (
    affinity_matrix,
    cosine_similarity,
    dump_affinity_csv,
    dump_labels_csv,
    gft_affinity,
    load_affinity_csv,
    load_labels_csv,
    row_normalize,
    temperature_exp,
    topk_filter,
)
from .cri import (
    InterventionParams,
    TieOutput,
    counterfactual_output,
    factual_output,
    intervene_with,
    sample_intervened,
    tie,
    tie_loss,
)
from .datagen import (
    Dataset,
    InferenceScenario,
    Modality,
    Sample,
    TrainingBatch,
    gen_synthetic_dataset,
    make_inference_scenario,
    sample_training_batch,
)
from .errors import (
    CapacityError,
    CiftError,
    ConvergenceError,
    DegenerateInputError,
    NumericalError,
    ParameterError,
)
from .h2ft import (
    EnhanceParams,
    QueryGroup,
    build_groups,
    column_stats,
    enhance,
    gft_transfer,
    het_transfer,
    hom_transfer,
)
from .inference import evaluate, query_gallery_affinity
from .losses import (
    HccDistance,
    LossBreakdown,
    LossWeightsConfig,
    cross_entropy,
    hcc_loss,
    hetero_centers,
    total_loss,
)
from .metrics import (
    QualityReport,
    RetrievalResult,
    affinity_error_ratio,
    affinity_quality,
    cmc_map,
    margin_quality,
    pairwise_distances,
)
from .model import Model
from .toyexp import (
    DEFAULT_QA_GRID,
    DEFAULT_QX_GRID,
    SurfaceCell,
    gen_controlled_affinity,
    gen_controlled_features,
    load_surface_csv,
    qy_surface,
    surface_to_csv,
)
from .trainer import (
    AblationFlags,
    GradCheckReport,
    RunResult,
    TrainConfig,
    finite_diff_check,
    lr_schedule,
    run_experiment,
    train_step,
)

__version__ = "0.1.0"

__all__ = [
    "AblationFlags",
    "CapacityError",
    "CiftError",
    "ConvergenceError",
    "Dataset",
    "DegenerateInputError",
    "DEFAULT_QA_GRID",
    "DEFAULT_QX_GRID",
    "EnhanceParams",
    "GradCheckReport",
    "HccDistance",
    "InferenceScenario",
    "InterventionParams",
    "LossBreakdown",
    "LossWeightsConfig",
    "Modality",
    "Model",
    "NumericalError",
    "ParameterError",
    "QualityReport",
    "QueryGroup",
    "RetrievalResult",
    "RunResult",
    "Sample",
    "SurfaceCell",
    "TieOutput",
    "TrainConfig",
    "TrainingBatch",
    "affinity_error_ratio",
    "affinity_matrix",
    "affinity_quality",
    "build_groups",
    "cmc_map",
    "column_stats",
    "cosine_similarity",
    "counterfactual_output",
    "cross_entropy",
    "dump_affinity_csv",
    "dump_labels_csv",
    "enhance",
    "evaluate",
    "factual_output",
    "finite_diff_check",
    "gen_controlled_affinity",
    "gen_controlled_features",
    "gen_synthetic_dataset",
    "gft_affinity",
    "gft_transfer",
    "hcc_loss",
    "het_transfer",
    "hetero_centers",
    "hom_transfer",
    "intervene_with",
    "load_affinity_csv",
    "load_labels_csv",
    "load_surface_csv",
    "lr_schedule",
    "make_inference_scenario",
    "margin_quality",
    "pairwise_distances",
    "qy_surface",
    "query_gallery_affinity",
    "row_normalize",
    "run_experiment",
    "sample_intervened",
    "sample_training_batch",
    "surface_to_csv",
    "temperature_exp",
    "tie",
    "tie_loss",
    "topk_filter",
    "total_loss",
    "train_step",
]

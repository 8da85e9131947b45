"""dimsift: dimension-wise supervision risk scoring and training-set refinement.

Multi-dimension regression training sets often hide label problems that only
hurt one output dimension. This package scores every (sample, dimension) cell
with gradient self-influence at a fitted probe head, then refines the
training set either by pruning the union of per-dimension top scorers or by
smoothly down-weighting risky cells, and verifies the effect on held-out
clean labels.
"""

__version__ = "0.1.0"

from .data import (
    Dataset,
    Sample,
    SynthConfig,
    generate_synthetic,
    inject_correlated_noise,
    inject_dimension_noise,
    load_dataset,
    save_dataset,
    split,
)
from .errors import DataError, DimsiftError, NumericalError, UsageError
from .influence import (
    DisentangledMatrix,
    InfluenceConfig,
    SelfInfluenceTable,
    disentangled_matrix,
    global_tracin_self,
    grad_per_dimension,
    row_sum_scores,
    scalar_influence,
    self_influence_closed_form,
    self_influence_explicit,
)
from .metrics import (
    HeterogeneityView,
    MaskingReport,
    MetricReport,
    OverlapCurve,
    auroc,
    evaluate_head,
    heterogeneity_export,
    masking_report,
    overlap_curve,
    spearman,
)
from .model import (
    LossTable,
    RegressionHead,
    Scope,
    TrainConfig,
    fit_closed_form,
    fit_gd,
    per_dim_loss,
    predict,
    residuals,
)
from .pipeline import (
    ExperimentReport,
    NoiseSpec,
    PipelineArtifacts,
    PipelineConfig,
    RefineSpec,
    default_config,
    run_pipeline,
)
from .refine import (
    PruneResult,
    WeightMatrix,
    ddp_select,
    ddr_weights,
    global_prune_select,
    loss_prune_select,
)

__all__ = [
    "__version__",
    "Dataset",
    "Sample",
    "SynthConfig",
    "generate_synthetic",
    "inject_dimension_noise",
    "inject_correlated_noise",
    "load_dataset",
    "save_dataset",
    "split",
    "DimsiftError",
    "UsageError",
    "DataError",
    "NumericalError",
    "RegressionHead",
    "Scope",
    "TrainConfig",
    "LossTable",
    "fit_closed_form",
    "fit_gd",
    "predict",
    "residuals",
    "per_dim_loss",
    "InfluenceConfig",
    "SelfInfluenceTable",
    "DisentangledMatrix",
    "grad_per_dimension",
    "self_influence_closed_form",
    "self_influence_explicit",
    "disentangled_matrix",
    "scalar_influence",
    "global_tracin_self",
    "row_sum_scores",
    "PruneResult",
    "WeightMatrix",
    "ddp_select",
    "ddr_weights",
    "loss_prune_select",
    "global_prune_select",
    "MetricReport",
    "OverlapCurve",
    "HeterogeneityView",
    "MaskingReport",
    "spearman",
    "auroc",
    "evaluate_head",
    "overlap_curve",
    "heterogeneity_export",
    "masking_report",
    "NoiseSpec",
    "RefineSpec",
    "PipelineConfig",
    "PipelineArtifacts",
    "ExperimentReport",
    "default_config",
    "run_pipeline",
]

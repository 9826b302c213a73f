"""salbench: saliency-map quality benchmarks under training and pruning regimes.

Train a small CNN classifier naturally, adversarially (PGD), or with
one-shot pruning (per-layer L1, global magnitude, structured); explain its
predictions with Vanilla Gradient, Integrated Gradients, and SmoothGrad;
and quantify explanation sparsity (Gini index) and faithfulness (ROAD with
MoRF removal and noisy linear imputation).
"""

__version__ = "0.1.0"

from .attribution import (
    Attribution,
    IgConfig,
    SgConfig,
    integrated_gradients,
    smoothgrad,
    to_saliency,
    vanilla_gradient,
)
from .autodiff import (
    GradientBundle,
    LossSelector,
    Tape,
    backward,
    cross_entropy_loss,
    forward,
    input_gradient,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .data import Dataset, SignSpec, generate_synthetic, load_image_folder
from .metrics import (
    GradientNormStats,
    RoadConfig,
    RoadCurve,
    SparsityScore,
    gini,
    gradient_norm_stats,
    noisy_linear_imputation,
    road_auc,
    road_curve,
    sparsity_delta,
)
from .model import (
    ArchitectureDescriptor,
    ModelState,
    cnn_descriptor,
    init_model,
    reference_cnn,
)
from .plan import ExperimentPlan, parse_plan
from .pruning import (
    PruneSpec,
    SparsityReport,
    mask_global,
    mask_l1_unstructured,
    mask_layered_structured,
    run_prune_workflow,
)
from .training import (
    OptimizerState,
    PgdConfig,
    TrainConfig,
    attacked_accuracy,
    evaluate_accuracy,
    fine_tune,
    pgd_attack,
    sgd_step,
    train_adversarial,
    train_natural,
)

__all__ = [
    "__version__",
    "Attribution", "IgConfig", "SgConfig", "integrated_gradients", "smoothgrad",
    "to_saliency", "vanilla_gradient",
    "GradientBundle", "LossSelector", "Tape", "backward", "cross_entropy_loss",
    "forward", "input_gradient",
    "load_checkpoint", "save_checkpoint",
    "Dataset", "SignSpec", "generate_synthetic", "load_image_folder",
    "GradientNormStats", "RoadConfig", "RoadCurve", "SparsityScore", "gini",
    "gradient_norm_stats", "noisy_linear_imputation", "road_auc", "road_curve",
    "sparsity_delta",
    "ArchitectureDescriptor", "ModelState", "cnn_descriptor", "init_model",
    "reference_cnn",
    "ExperimentPlan", "parse_plan",
    "PruneSpec", "SparsityReport", "mask_global", "mask_l1_unstructured",
    "mask_layered_structured", "run_prune_workflow",
    "OptimizerState", "PgdConfig", "TrainConfig", "attacked_accuracy",
    "evaluate_accuracy", "fine_tune", "pgd_attack", "sgd_step",
    "train_adversarial", "train_natural",
]

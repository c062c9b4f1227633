"""Desk-scale unsupervised domain adaptation lab.

The package bundles a tiny reverse-mode autodiff core, the squared-probability
target-loss family with its entropy competitors, threshold-gated self
guidance, two small differentiable models, seed-deterministic synthetic
domain pairs, the SGD training protocol, and evaluation/report tooling, all
tied together by the ``maxsquare`` CLI.
"""

from . import autodiff
from .errors import (
    ConfigError,
    DomainError,
    FormatError,
    GenerationError,
    GraphError,
    MaxSquareError,
    ShapeError,
)
from .losses import (
    ABSTAIN,
    ClassCounts,
    LossResult,
    TARGET_LOSSES,
    binary_entropy_grad,
    binary_maxsquare_grad,
    binary_scaled_entropy_grad,
    class_counts,
    cross_entropy,
    entropy_loss,
    iw_max_squares_loss,
    max_squares_loss,
    pearson_chi2_uniform,
    scaled_entropy_loss,
    uda_objective,
)
from .guidance import MultiLevelOutput, ensemble_average, multi_level_target_loss, self_guidance
from .models import MlpSpec, SegNetSpec, init_params, load_params, mlp_forward, save_params, seg_forward
from .datasets import (
    AppearanceShift,
    ClassificationDomainSpec,
    Dataset,
    SegmentationDomainSpec,
    eval_dataset,
    gen_classification_pair,
    gen_segmentation_pair,
    read_dataset,
    write_dataset,
)
from .training import (
    OptimizerState,
    TrainConfig,
    adapt,
    anneal_lr,
    confidence_split,
    poly_lr,
    pretrain_source,
    sgd_step,
)
from .metrics import (
    ClassReport,
    ConfusionMatrix,
    class_frequency,
    class_report,
    confusion_matrix,
    emit_report,
    iou_per_class,
    mean_iou,
    mean_prob_per_class,
)

__version__ = "0.1.0"

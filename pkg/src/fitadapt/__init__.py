"""Adversarial domain adaptation for wearable-based fitness regression under
label distribution shift: synthetic gold/silver cohorts, a two-phase
adversarial training procedure with coarse and fine domain discriminators,
reference baselines, and a seeded benchmark harness.
"""

from .cohort import (
    CohortSpec,
    LabelCorruption,
    SampleSet,
    ShiftSpec,
    apply_label_shift,
    corrupt_to_silver,
    generate_cohort,
    source_cohort_spec,
    target_cohort_spec,
)
from .errors import DegenerateInputError, InvalidStateError
from .features import (
    FeatureLayout,
    IntensityThresholds,
    assemble_features,
    downsample,
    minmax_scale,
)
from .networks import Model, NetConfig, freeze_plan, init_model, load_checkpoint, save_checkpoint
from .objectives import Histogram, LossWeights, MetricRecord, build_histogram, hellinger, kl_divergence
from .training import (
    DomainAssignment,
    TrainConfig,
    TrainTrace,
    adversarial_adapt,
    assign_distribution_labels,
    evaluate,
    finetune,
    mix_domains,
    pretrain,
)

__version__ = "0.1.0"

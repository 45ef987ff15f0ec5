"""Learning from label proportions in large bags via mini-bag sampling.

Given bags of instances labeled only with class proportions, this package
trains an instance-level classifier by sampling small mini-bags each
iteration, drawing each mini-bag's supervision from the exact multivariate
hypergeometric composition law, and weighting bag losses by the PMF value
of the drawn supervision.
"""

from .bags import (
    Bag,
    LabeledInstances,
    MiniBag,
    SyntheticDataset,
    generate_synthetic_dataset,
    label_audit,
    make_bags,
    sample_minibag,
    true_minibag_proportion,
)
from .hypergeom import MultivariateHypergeometric
from .losses import (
    gaussian_perturb_supervision,
    normalize_weights,
    perturb_supervision,
    predict_bag_proportion,
    proportion_loss,
    weighted_batch_loss,
)
from .model import ClassifierParams, batch_gradient, forward, init_classifier, sgd_step
from .trainer import (
    TrainConfig,
    TrainTrace,
    evaluate_instance_accuracy,
    evaluate_mdice,
    run_training,
)

__version__ = "0.1.0"

__all__ = [
    "Bag",
    "ClassifierParams",
    "LabeledInstances",
    "MiniBag",
    "MultivariateHypergeometric",
    "SyntheticDataset",
    "TrainConfig",
    "TrainTrace",
    "batch_gradient",
    "evaluate_instance_accuracy",
    "evaluate_mdice",
    "forward",
    "gaussian_perturb_supervision",
    "generate_synthetic_dataset",
    "init_classifier",
    "label_audit",
    "make_bags",
    "normalize_weights",
    "perturb_supervision",
    "predict_bag_proportion",
    "proportion_loss",
    "run_training",
    "sample_minibag",
    "sgd_step",
    "true_minibag_proportion",
    "weighted_batch_loss",
]

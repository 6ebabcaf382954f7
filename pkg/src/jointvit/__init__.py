"""Joint classification/regression supervision of a small Vision Transformer
for long-tailed SaO2 category prediction, in pure numpy."""

from .autodiff import Graph, Tensor, backward, grad_check
from .data import (
    AugmentPolicy, Dataset, LabeledInstance, SaO2Class, SynthSpec, augment_once, balance_augment,
    load_image_folder, sao2_to_class, slice_volume, synth_longtail, write_image_folder,
)
from .evaluation import (
    ConfusionMatrix, MetricsReport, accuracy, confusion_matrix, kfold_split, macro_sensitivity,
    macro_specificity, run_ablation, run_cv,
)
from .losses import JointLossConfig, LossVariant, bal_bce_loss, bce_loss, joint_loss, mse_loss
from .model import ViTConfig, ViTParams, forward, init_params, patchify, predict_class, predict_instance
from .training import OptimizerConfig, TrainConfig, train

__version__ = "0.1.0"

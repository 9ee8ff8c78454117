"""Semi-supervised domain adaptation by enhanced categorical alignment and consistency learning.

The package is organised bottom-up: :mod:`ecacl.tensor` (autodiff),
:mod:`ecacl.models`, the losses in :mod:`ecacl.alignment`,
:mod:`ecacl.consistency` and :mod:`ecacl.uda`, augmentation in
:mod:`ecacl.augment`, datasets and sampling in :mod:`ecacl.data`, and the
training loop in :mod:`ecacl.trainer`.
"""

__version__ = "0.1.0"

from .alignment import compute_prototypes, mine_hard_triplets, proto_class_distribution, prototypical_loss, triplet_loss
from .augment import StrongAugSpec, WeakAugSpec, cutout, strong_augment, weak_augment
from .checkpoint import load_checkpoint, save_checkpoint
from .config import TrainConfig, load_config
from .consistency import consistency_loss, gate_pseudo_labels
from .data import apply_shift, balanced_batches, generate_synthetic, load_idx, select_landmarks, write_idx
from .errors import ConfigError, EcaclError, FormatError, NumericError
from .models import build_model, forward_features, forward_logits, predict
from .tensor import Tape, Tensor, backward, no_grad
from .trainer import evaluate, train, train_step
from .uda import UdaTerm, uda_loss

__all__ = [
    "__version__",
    "Tensor",
    "Tape",
    "backward",
    "no_grad",
    "build_model",
    "forward_features",
    "forward_logits",
    "predict",
    "compute_prototypes",
    "proto_class_distribution",
    "prototypical_loss",
    "mine_hard_triplets",
    "triplet_loss",
    "gate_pseudo_labels",
    "consistency_loss",
    "UdaTerm",
    "uda_loss",
    "WeakAugSpec",
    "StrongAugSpec",
    "weak_augment",
    "strong_augment",
    "cutout",
    "generate_synthetic",
    "apply_shift",
    "select_landmarks",
    "balanced_batches",
    "load_idx",
    "write_idx",
    "TrainConfig",
    "load_config",
    "train",
    "train_step",
    "evaluate",
    "save_checkpoint",
    "load_checkpoint",
    "EcaclError",
    "ConfigError",
    "NumericError",
    "FormatError",
]

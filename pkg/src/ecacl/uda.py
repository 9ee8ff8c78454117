"""Pluggable unsupervised alignment term added to the supervised loss.

``none`` contributes nothing, ``ent`` minimises prediction entropy on weakly
augmented unlabeled target samples, and ``mme`` computes the same value but
routes the classifier weights through gradient reversal so that the head
maximises the entropy while the encoder minimises it.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import tensor as T
from .errors import ConfigError
from .models import Model, forward_features, forward_logits
from .tensor import Tensor

__all__ = ["UdaTerm", "UDA_NAMES", "entropy", "uda_loss", "unlabeled_entropy"]

UDA_NAMES = ("none", "ent", "mme")


@dataclass
class UdaTerm:
    name: str = "mme"
    weight: float = 0.1

    def __post_init__(self):
        if self.name not in UDA_NAMES:
            raise ConfigError(f"unknown UDA term {self.name!r}; expected one of {UDA_NAMES}")
        if self.weight < 0:
            raise ConfigError(f"UDA weight must be nonnegative, got {self.weight}")


def entropy(p: Tensor) -> Tensor:
    """Mean Shannon entropy (nats) of the rows of a B x C probability matrix."""
    return T.scale(T.total(T.xlogx(p)), -1.0 / p.shape[0])


def unlabeled_entropy(term: UdaTerm, model: Model, features: Tensor) -> Tensor:
    """Unweighted entropy of the classifier on ``features`` under ``term``'s wiring."""
    if term.name not in UDA_NAMES:
        raise ConfigError(f"unknown UDA term {term.name!r}")
    coeff = 1.0 if term.name == "mme" else None
    return entropy(T.softmax(forward_logits(model, features, reverse_coeff=coeff)))


def uda_loss(term: UdaTerm, model: Model, source_strong, unlabeled_weak) -> Tensor:
    """Weighted alignment loss for one batch.

    ``unlabeled_weak`` is either a B x input_dim image tensor or a batch
    object exposing ``.images``.  The labeled source batch is accepted for
    interface symmetry; neither entropy plugin reads it.
    """
    if term.name not in UDA_NAMES:
        raise ConfigError(f"unknown UDA term {term.name!r}")
    if term.name == "none" or term.weight == 0:
        return Tensor(0.0)
    x = unlabeled_weak if isinstance(unlabeled_weak, Tensor) else Tensor(unlabeled_weak.images)
    x = T.reshape(x, (x.shape[0], -1)) if x.data.ndim != 2 else x
    h = unlabeled_entropy(term, model, forward_features(model, x))
    return T.scale(h, term.weight)

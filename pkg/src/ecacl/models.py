"""Encoder, classifier and the composed model used for adaptation.

The encoder is a ReLU multilayer perceptron over flattened images; the
classifier is a (by default cosine-style) linear head on top of it.  All
parameters live in a single ordered dict so the optimizer and the checkpoint
writer can walk them by name.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError
from .tensor import Tensor, gradient_reversal

__all__ = [
    "EncoderSpec",
    "ClassifierSpec",
    "Model",
    "build_model",
    "forward_features",
    "forward_logits",
    "predict",
    "gradient_reversal",
]

NORM_EPS = 1e-12


@dataclass
class EncoderSpec:
    input_dim: int = 256
    hidden_dims: List[int] = field(default_factory=lambda: [128, 64])
    embed_dim: int = 32

    def __post_init__(self):
        dims = [self.input_dim, *self.hidden_dims, self.embed_dim]
        if any(int(d) < 1 for d in dims):
            raise ConfigError(f"encoder dimensions must be >= 1, got {dims}")


@dataclass
class ClassifierSpec:
    embed_dim: int = 32
    num_classes: int = 8
    normalize: bool = True
    temperature: float = 0.05

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if not self.temperature > 0:
            raise ConfigError(f"temperature must be positive, got {self.temperature}")


@dataclass
class Model:
    """Parameters of h = classifier(encoder(x)).

    ``params`` maps names such as ``encoder.0.weight`` or ``classifier.weight``
    to tensors.  Names starting with ``encoder.`` form the "body" group and the
    rest the "head" group; ``base_lr`` holds each group's initial learning
    rate.
    """

    encoder: EncoderSpec
    classifier: ClassifierSpec
    params: Dict[str, Tensor]
    base_lr: Dict[str, float] = field(default_factory=lambda: {"body": 0.001, "head": 0.01})

    @property
    def num_encoder_layers(self) -> int:
        return len(self.encoder.hidden_dims) + 1

    def group_of(self, name: str) -> str:
        return "body" if name.startswith("encoder.") else "head"

    def parameters(self) -> List[Tensor]:
        return list(self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


def _uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def build_model(
    encoder: EncoderSpec,
    classifier: ClassifierSpec,
    rng: np.random.Generator,
    identity_init: bool = False,
) -> Model:
    """Create a model with weights drawn uniformly in +-1/sqrt(fan_in).

    ``identity_init`` sets every encoder weight to the identity (only valid
    when all encoder widths are equal) and zero biases, which is handy for
    testing.
    """
    if classifier.embed_dim != encoder.embed_dim:
        raise ConfigError(
            f"classifier embed_dim {classifier.embed_dim} != encoder embed_dim {encoder.embed_dim}"
        )
    dims = [encoder.input_dim, *encoder.hidden_dims, encoder.embed_dim]
    params: Dict[str, Tensor] = {}
    for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        if identity_init:
            if fan_in != fan_out:
                raise ConfigError("identity_init needs equal encoder widths")
            w, b = np.eye(fan_in), np.zeros(fan_out)
        else:
            w = _uniform(rng, fan_in, (fan_in, fan_out))
            b = _uniform(rng, fan_in, (fan_out,))
        params[f"encoder.{i}.weight"] = Tensor(w, requires_grad=True, name=f"encoder.{i}.weight")
        params[f"encoder.{i}.bias"] = Tensor(b, requires_grad=True, name=f"encoder.{i}.bias")
    w = _uniform(rng, classifier.embed_dim, (classifier.embed_dim, classifier.num_classes))
    params["classifier.weight"] = Tensor(w, requires_grad=True, name="classifier.weight")
    if not classifier.normalize:
        b = _uniform(rng, classifier.embed_dim, (classifier.num_classes,))
        params["classifier.bias"] = Tensor(b, requires_grad=True, name="classifier.bias")
    return Model(encoder, classifier, params)


def forward_features(model: Model, batch: Tensor) -> Tensor:
    """Embed a B x input_dim batch; ReLU between layers, none after the last."""
    if batch.data.ndim != 2 or batch.shape[1] != model.encoder.input_dim:
        raise DimensionError(
            f"encoder expects width {model.encoder.input_dim}, got batch of shape {batch.shape}"
        )
    h = batch
    n = model.num_encoder_layers
    for i in range(n):
        h = T.add_row(T.matmul(h, model.params[f"encoder.{i}.weight"]), model.params[f"encoder.{i}.bias"])
        if i < n - 1:
            h = T.relu(h)
    return h


def forward_logits(model: Model, features: Tensor, reverse_coeff: Optional[float] = None) -> Tensor:
    """Class scores for a B x embed_dim feature batch.

    With ``normalize`` the rows are L2-normalised and the scores divided by the
    temperature.  ``reverse_coeff`` routes the classifier parameters through a
    gradient-reversal node, so the head receives the negated gradient while the
    forward value and the feature gradient are unchanged.
    """
    spec = model.classifier
    if features.data.ndim != 2 or features.shape[1] != spec.embed_dim:
        raise DimensionError(
            f"classifier expects width {spec.embed_dim}, got features of shape {features.shape}"
        )
    w = model.params["classifier.weight"]
    bias = model.params.get("classifier.bias")
    if reverse_coeff is not None:
        w = gradient_reversal(w, reverse_coeff)
        if bias is not None:
            bias = gradient_reversal(bias, reverse_coeff)
    if spec.normalize:
        x = T.normalize_rows(features, NORM_EPS)
        return T.scale(T.matmul(x, w), 1.0 / spec.temperature)
    out = T.matmul(features, w)
    return T.add_row(out, bias) if bias is not None else out


def predict(model: Model, images: np.ndarray, chunk: int = 1024) -> np.ndarray:
    """Argmax class for each flattened image, computed without a tape."""
    x = np.asarray(images, dtype=np.float64).reshape(len(images), -1)
    out = []
    with T.no_grad():
        for start in range(0, len(x), chunk):
            logits = forward_logits(model, forward_features(model, Tensor(x[start:start + chunk])))
            out.append(np.argmax(logits.data, axis=1))
    return np.concatenate(out) if out else np.zeros(0, dtype=np.intp)

"""Training loop, optimizer, learning-rate policy and evaluation."""

from __future__ import annotations

import json
import logging
import math
import warnings
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import tensor as T
from .alignment import compute_prototypes, mine_hard_triplets, prototypical_loss, triplet_loss
from .augment import (
    PIPE_STRONG_LANDMARK,
    PIPE_STRONG_SOURCE,
    PIPE_STRONG_UNLABELED,
    PIPE_WEAK_LANDMARK,
    PIPE_WEAK_SOURCE,
    PIPE_WEAK_UNLABELED,
    derive_seeds,
    strong_augment_batch,
    weak_augment_batch,
)
from .checkpoint import save_checkpoint
from .config import TrainConfig, dump_config
from .consistency import consistency_loss, gate_pseudo_labels
from .data import (
    BalancedBatch,
    DomainDataset,
    UnlabeledSet,
    apply_shift,
    balanced_batches,
    generate_synthetic,
    load_idx,
    select_landmarks,
)
from .errors import DimensionError, NumericError
from .models import ClassifierSpec, EncoderSpec, Model, build_model, forward_features, forward_logits, predict
from .tensor import Tensor
from .uda import unlabeled_entropy

log = logging.getLogger(__name__)

__all__ = [
    "MetricsRecord",
    "Views",
    "Losses",
    "SGDMomentum",
    "lr_at",
    "sgd_momentum_step",
    "make_views",
    "cross_entropy",
    "compute_losses",
    "train_step",
    "evaluate",
    "prepare_domains",
    "build_model_for",
    "train",
]

LOSS_KEYS = ("ce", "ua", "cata", "cona", "total")


@dataclass
class MetricsRecord:
    step: int
    split: str
    per_class_accuracy: List[Optional[float]] = field(default_factory=list)
    mca: Optional[float] = None
    overall_accuracy: Optional[float] = None
    losses: Dict[str, float] = field(default_factory=dict)
    extra: Dict[str, float] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


# --- optimisation -------------------------------------------------------------------


def lr_at(p: float, base_lr: float, gamma: float = 10.0, beta: float = 0.75) -> float:
    """Annealed rate base_lr * (1 + gamma * p) ** -beta for progress p in [0, 1]."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"training progress must lie in [0, 1], got {p}")
    return base_lr * (1.0 + gamma * p) ** (-beta)


def sgd_momentum_step(params, grads, lrs, momentum: float, velocity) -> None:
    """In-place heavy-ball update: v <- mu * v + g; theta <- theta - lr * v.

    ``params`` are Tensors, ``grads``/``velocity`` arrays aligned with them,
    ``lrs`` one learning rate per parameter.
    """
    for i, (p, g, lr) in enumerate(zip(params, grads, lrs)):
        if g is None:
            g = np.zeros(p.shape)
        if g.shape != p.shape or velocity[i].shape != p.shape:
            raise DimensionError(f"parameter {p.name or i}: shape {p.shape}, grad {g.shape}, velocity {velocity[i].shape}")
        velocity[i] = momentum * velocity[i] + g
        new = p.data - lr * velocity[i]
        new.flags.writeable = False
        p.data = new


class SGDMomentum:
    """Momentum SGD with per-group annealed learning rates."""

    def __init__(self, model: Model, momentum: float = 0.9, gamma: float = 10.0, beta: float = 0.75):
        self.model = model
        self.momentum = momentum
        self.gamma = gamma
        self.beta = beta
        self.names = list(model.params)
        self.velocity = [np.zeros(model.params[n].shape) for n in self.names]

    def lrs(self, progress: float) -> Dict[str, float]:
        return {g: lr_at(progress, base, self.gamma, self.beta) for g, base in self.model.base_lr.items()}

    def step(self, progress: float) -> Dict[str, float]:
        rates = self.lrs(progress)
        params = [self.model.params[n] for n in self.names]
        sgd_momentum_step(
            params,
            [p.grad for p in params],
            [rates[self.model.group_of(n)] for n in self.names],
            self.momentum,
            self.velocity,
        )
        return rates


# --- one step ---------------------------------------------------------------------


@dataclass
class Views:
    """Flattened augmented inputs for one batch (rows are samples)."""

    source: np.ndarray
    landmarks: np.ndarray
    unlabeled_weak: np.ndarray
    unlabeled_strong: Optional[np.ndarray]
    source_labels: np.ndarray
    landmark_labels: np.ndarray
    classes: np.ndarray


@dataclass
class Losses:
    ce: Tensor
    ua: Tensor
    cata: Tensor
    cona: Tensor
    total: Tensor
    gate_passed: int = 0
    skipped_triplets: int = 0

    def values(self) -> Dict[str, float]:
        return {k: getattr(self, k).item() for k in LOSS_KEYS}


def _flat(x: np.ndarray) -> np.ndarray:
    return x.reshape(len(x), -1)


def make_views(config: TrainConfig, batch: BalancedBatch, step: int) -> Views:
    """Augment one batch: strong (or weak, with SA off) labeled views, weak and strong unlabeled views.

    All strong views go through one batched call and all weak views through
    another; each sample's randomness comes from its own derived seed.
    """
    seed, w = config.run_seed, config.workers
    ns, nl, nu = len(batch.source_idx), len(batch.landmark_idx), len(batch.unlabeled_idx)
    want_strong_u = config.lambda2 > 0 and nu > 0

    def seeds(n, pipe):
        return derive_seeds(seed, step, np.arange(n), pipe)

    strong_imgs, strong_seeds, weak_imgs, weak_seeds = [], [], [], []
    if config.strong_labeled:
        strong_imgs += [batch.source_images, batch.landmark_images]
        strong_seeds += [seeds(ns, PIPE_STRONG_SOURCE), seeds(nl, PIPE_STRONG_LANDMARK)]
    else:
        weak_imgs += [batch.source_images, batch.landmark_images]
        weak_seeds += [seeds(ns, PIPE_WEAK_SOURCE), seeds(nl, PIPE_WEAK_LANDMARK)]
    weak_imgs.append(batch.unlabeled_images)
    weak_seeds.append(seeds(nu, PIPE_WEAK_UNLABELED))
    if want_strong_u:
        strong_imgs.append(batch.unlabeled_images)
        strong_seeds.append(seeds(nu, PIPE_STRONG_UNLABELED))
    strong = weak = None
    if strong_imgs:
        strong = _flat(strong_augment_batch(np.concatenate(strong_imgs), config.strong_aug, np.concatenate(strong_seeds), w))
    weak = _flat(weak_augment_batch(np.concatenate(weak_imgs), config.weak_aug, np.concatenate(weak_seeds), w))
    labeled = strong if config.strong_labeled else weak
    src, lm = labeled[:ns], labeled[ns:ns + nl]
    uw = weak[-nu:] if nu else weak[:0]
    us = strong[-nu:] if want_strong_u else None
    return Views(src, lm, uw, us, batch.source_labels, batch.landmark_labels, batch.classes)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    return T.neg(T.mean(T.pick(T.log_softmax(logits), labels)))


def compute_losses(model: Model, config: TrainConfig, views: Views) -> Losses:
    """Every component of the objective for one batch, on a single tape.

    total = ce + alpha * ua + lambda1 * cata + lambda2 * cona, where ``ua`` is
    the unweighted plugin entropy and ``alpha`` the plugin weight.
    """
    ns, nl, nu = len(views.source), len(views.landmarks), len(views.unlabeled_weak)
    parts = [views.source, views.landmarks, views.unlabeled_weak]
    if views.unlabeled_strong is not None:
        parts.append(views.unlabeled_strong)
    feats = forward_features(model, Tensor(np.concatenate(parts, axis=0)))
    f_src = T.slice_rows(feats, 0, ns)
    f_lm = T.slice_rows(feats, ns, ns + nl)

    ce = T.add(
        cross_entropy(forward_logits(model, f_src), views.source_labels),
        cross_entropy(forward_logits(model, f_lm), views.landmark_labels),
    )

    zero = Tensor(0.0)
    ua = zero
    uda = config.uda
    f_uw = T.slice_rows(feats, ns + nl, ns + nl + nu) if nu else None
    if uda.name != "none" and uda.weight > 0 and nu:
        ua = unlabeled_entropy(uda, model, f_uw)

    cata = zero
    skipped = 0
    if config.lambda1 > 0:
        if config.variant == "ecacl_p":
            protos = compute_prototypes(f_lm, views.landmark_labels, classes=views.classes)
            cata = prototypical_loss(f_src, views.source_labels, protos)
        else:
            tally: Counter = Counter()
            trips = mine_hard_triplets(f_lm, views.landmark_labels, f_src, views.source_labels, tally)
            skipped = tally["skipped"]
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                cata = triplet_loss(trips, f_lm, f_src, config.margin)

    cona = zero
    passed = 0
    if config.lambda2 > 0 and views.unlabeled_strong is not None:
        with T.no_grad():
            p_w = T.softmax(forward_logits(model, Tensor(f_uw.data)))
        gated = gate_pseudo_labels(p_w, config.sigma)
        passed = gated.num_passed
        f_us = T.slice_rows(feats, ns + nl + nu, ns + nl + 2 * nu)
        cona = consistency_loss(gated, T.softmax(forward_logits(model, f_us)))

    total = T.add(
        T.add(T.add(ce, T.scale(ua, uda.weight)), T.scale(cata, config.lambda1)),
        T.scale(cona, config.lambda2),
    )
    return Losses(ce, ua, cata, cona, total, passed, skipped)


def train_step(
    model: Model,
    config: TrainConfig,
    batch: BalancedBatch,
    step_index: int,
    optimizer: Optional[SGDMomentum] = None,
) -> MetricsRecord:
    """Augment, compute the objective, backpropagate and take one optimizer step."""
    optimizer = optimizer or SGDMomentum(model, config.optim.momentum, config.optim.gamma, config.optim.beta)
    views = make_views(config, batch, step_index)
    with T.Tape() as tape:
        losses = compute_losses(model, config, views)
        values = losses.values()
        if not all(math.isfinite(v) for v in values.values()):
            tape.clear()
            raise NumericError(f"non-finite loss at step {step_index}: {values}")
        model.zero_grad()
        T.backward(losses.total, tape)
    progress = min(step_index / max(config.steps, 1), 1.0)
    rates = optimizer.step(progress)
    return MetricsRecord(
        step=step_index,
        split="train",
        losses=values,
        extra={
            "gate_passed": losses.gate_passed,
            "skipped_triplets": losses.skipped_triplets,
            "lr_head": rates.get("head", 0.0),
            "lr_body": rates.get("body", 0.0),
        },
    )


# --- evaluation ---------------------------------------------------------------------


def accuracy_record(pred, labels, num_classes: int, step: int = 0, split: str = "eval") -> MetricsRecord:
    pred = np.asarray(pred)
    labels = np.asarray(labels)
    per_class: List[Optional[float]] = []
    for c in range(num_classes):
        members = labels == c
        n = int(members.sum())
        if n == 0:
            warnings.warn(f"class {c} has no evaluation samples; excluded from MCA", stacklevel=2)
            per_class.append(None)
        else:
            per_class.append(int(np.sum(pred[members] == c)) / n)
    present = [a for a in per_class if a is not None]
    mca = sum(present) / len(present) if present else None
    overall = int(np.sum(pred == labels)) / len(labels) if len(labels) else None
    return MetricsRecord(step=step, split=split, per_class_accuracy=per_class, mca=mca, overall_accuracy=overall)


def evaluate(model: Model, dataset, step: int = 0, split: str = "target") -> MetricsRecord:
    """Per-class accuracy, mean class accuracy and overall accuracy on raw images."""
    if isinstance(dataset, UnlabeledSet):
        dataset = dataset.as_eval_dataset()
    pred = predict(model, dataset.images)
    return accuracy_record(pred, dataset.labels, dataset.num_classes, step, split)


# --- full runs ----------------------------------------------------------------------


def prepare_domains(config: TrainConfig) -> Tuple[DomainDataset, DomainDataset, UnlabeledSet]:
    """Source set, landmarks and unlabeled target set for a config."""
    d = config.data
    if d.source_idx:
        source = load_idx(*d.source_idx, domain="source", num_classes=d.num_classes)
    else:
        source = generate_synthetic(d.num_classes, d.per_class, d.image_size, d.source_seed, d.noise_std, d.jitter, d.channels)
    if d.target_idx:
        target = load_idx(*d.target_idx, domain="target", num_classes=d.num_classes)
    else:
        raw = generate_synthetic(d.num_classes, d.per_class, d.image_size, d.target_seed, d.noise_std, d.jitter, d.channels)
        target = apply_shift(raw, d.shift, seed=d.target_seed)
    landmarks, unlabeled = select_landmarks(target, d.split)
    return source, landmarks, unlabeled


def build_model_for(config: TrainConfig, input_dim: int, num_classes: int) -> Model:
    m = config.model
    rng = np.random.default_rng([config.run_seed, 0x6D6F64])
    model = build_model(
        EncoderSpec(input_dim, list(m.hidden_dims), m.embed_dim),
        ClassifierSpec(m.embed_dim, num_classes, m.normalize, m.temperature),
        rng,
    )
    model.base_lr = {"body": config.optim.lr_body, "head": config.optim.lr_head}
    return model


def train(config: TrainConfig, out_dir=None, domains=None) -> dict:
    """Run a full training job; returns the final summary.

    When ``out_dir`` is given it receives ``config.json``, ``metrics.jsonl``
    (one record per line), ``summary.json`` and ``model.eckl``.
    """
    source, landmarks, unlabeled = domains or prepare_domains(config)
    input_dim = int(np.prod(source.image_shape))
    model = build_model_for(config, input_dim, source.num_classes)
    opt = SGDMomentum(model, config.optim.momentum, config.optim.gamma, config.optim.beta)
    records: List[MetricsRecord] = []
    stream = balanced_batches(
        source, landmarks, unlabeled, config.M, config.N_s, config.N_t, config.N_u, config.run_seed,
    )
    for step in range(config.steps):
        batch = next(stream)
        rec = train_step(model, config, batch, step, opt)
        done = step + 1
        if done % config.log_every == 0 or done == config.steps:
            records.append(rec)
        if done % config.eval_every == 0 or done == config.steps:
            ev = evaluate(model, unlabeled, step=done)
            records.append(ev)
            log.info("step %d: target MCA %.4f  loss %.4f", done, ev.mca, rec.losses["total"])
    final = records[-1]
    summary = {
        "steps": config.steps,
        "variant": config.variant,
        "uda": config.uda.name,
        "target_mca": final.mca,
        "target_overall_accuracy": final.overall_accuracy,
        "per_class_accuracy": final.per_class_accuracy,
    }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        dump_config(config, out / "config.json")
        (out / "metrics.jsonl").write_text("".join(r.to_json() + "\n" for r in records), encoding="utf-8")
        (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        save_checkpoint(model, out / "model.eckl")
    summary["records"] = records
    summary["model"] = model
    return summary

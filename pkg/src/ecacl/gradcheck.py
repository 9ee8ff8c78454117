"""Central finite-difference checks for every loss in the objective.

Each case builds a small random instance (batch <= 8, classes <= 4, width
<= 6), computes the autodiff gradient of a scalar loss with respect to a set
of leaf tensors, and compares it coordinate by coordinate with
``(f(x + h) - f(x - h)) / 2h``.

The per-coordinate error is ``|a - n| / max(|a|, |n|, floor)``.  The floor
keeps coordinates whose true gradient is essentially zero from dividing
round-off noise by nothing; with ``h = 1e-6`` in float64 that noise is about
``1e-10``, far below ``floor * tol``.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass
from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np

from . import tensor as T
from .alignment import compute_prototypes, mine_hard_triplets, prototypical_loss, triplet_loss
from .config import TrainConfig
from .consistency import consistency_loss, gate_pseudo_labels
from .models import ClassifierSpec, EncoderSpec, Model, build_model, forward_logits
from .tensor import Tensor
from .trainer import Views, compute_losses, cross_entropy
from .uda import UdaTerm, entropy, unlabeled_entropy

__all__ = ["GradCheckResult", "numeric_gradient", "check_gradient", "gradcheck_cases", "run_gradcheck"]

DEFAULT_H = 1e-6
DEFAULT_TOL = 1e-5
DEFAULT_FLOOR = 1e-4


@dataclass
class GradCheckResult:
    name: str
    max_rel_err: float
    num_coords: int
    seconds: float
    tol: float = DEFAULT_TOL

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_err < self.tol)


def numeric_gradient(loss_fn: Callable[[], float], leaves: Sequence[Tensor], h: float = DEFAULT_H) -> List[np.ndarray]:
    """Central differences of ``loss_fn()`` w.r.t. each leaf, perturbing one coordinate at a time."""
    grads = []
    for leaf in leaves:
        base = leaf.data.copy()
        g = np.zeros_like(base)
        for idx in np.ndindex(base.shape):
            for sgn in (1.0, -1.0):
                x = base.copy()
                x[idx] += sgn * h
                x.flags.writeable = False
                leaf.data = x
                g[idx] += sgn * loss_fn()
            g[idx] /= 2 * h
        base.flags.writeable = False
        leaf.data = base
        grads.append(g)
    return grads


def _value(build: Callable[[], Tensor]) -> float:
    with T.no_grad():
        return build().item()


def check_gradient(
    name: str,
    build: Callable[[], Tensor],
    leaves: Sequence[Tensor],
    signs: Sequence[float] = (),
    h: float = DEFAULT_H,
    tol: float = DEFAULT_TOL,
    floor: float = DEFAULT_FLOOR,
) -> GradCheckResult:
    """Compare autodiff and finite differences for ``build()`` w.r.t. ``leaves``.

    ``signs`` (default all +1) says which leaves sit behind a gradient
    reversal: for those the expected autodiff gradient is ``-coeff`` times the
    finite difference.
    """
    t0 = time.perf_counter()
    for leaf in leaves:
        leaf.grad = None
    with T.Tape() as tape:
        loss = build()
        T.backward(loss, tape)
    auto = [leaf.grad if leaf.grad is not None else np.zeros(leaf.shape) for leaf in leaves]
    numeric = numeric_gradient(lambda: _value(build), leaves, h)
    signs = list(signs) or [1.0] * len(leaves)
    worst = 0.0
    count = 0
    for a, n, s in zip(auto, numeric, signs):
        n = s * n
        err = np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(err.max()))
        count += a.size
    return GradCheckResult(name, worst, count, time.perf_counter() - t0, tol)


def _leaf(rng: np.random.Generator, shape, scale: float = 1.0, name: str = "") -> Tensor:
    return Tensor(rng.normal(0, scale, shape), requires_grad=True, name=name)


def _small_model(rng: np.random.Generator, C: int = 4, d_in: int = 6, temperature: float = 0.5) -> Model:
    enc = EncoderSpec(input_dim=d_in, hidden_dims=[5], embed_dim=4)
    cls = ClassifierSpec(embed_dim=4, num_classes=C, normalize=True, temperature=temperature)
    return build_model(enc, cls, rng)


def _balanced_labels(rng: np.random.Generator, n: int, C: int) -> np.ndarray:
    return rng.permutation(np.arange(n) % C)


def gradcheck_cases(rng: np.random.Generator) -> Dict[str, Tuple[Callable[[], Tensor], List[Tensor], List[float]]]:
    """Name -> (loss builder, leaves, signs) for one random draw of every case."""
    C, d = 4, 6
    cases = {}

    # joint cross-entropy over source and landmark logits
    src_logits, lm_logits = _leaf(rng, (8, C)), _leaf(rng, (4, C))
    ys, yl = _balanced_labels(rng, 8, C), np.arange(C)
    cases["cross_entropy"] = (
        lambda: T.add(cross_entropy(src_logits, ys), cross_entropy(lm_logits, yl)),
        [src_logits, lm_logits],
        [],
    )

    # prototypical loss, differentiated through both source and landmark embeddings
    src, lm = _leaf(rng, (8, d)), _leaf(rng, (C, d))
    ys2 = _balanced_labels(rng, 8, C)
    cases["prototypical"] = (
        lambda: prototypical_loss(src, ys2, compute_prototypes(lm, np.arange(C))),
        [src, lm],
        [],
    )

    # triplet loss; mining is redone on every evaluation and is locally constant
    tsrc, tlm = _leaf(rng, (8, d), 0.5), _leaf(rng, (C, d), 0.5)
    ys3 = _balanced_labels(rng, 8, C)

    def trip():
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return triplet_loss(mine_hard_triplets(tlm, np.arange(C), tsrc, ys3), tlm, tsrc, margin=4.0)

    cases["triplet"] = (trip, [tsrc, tlm], [])

    # consistency: gate from fixed weak-view probabilities, gradient through strong logits
    weak = Tensor(rng.normal(0, 3.0, (8, C)))
    strong = _leaf(rng, (8, C))
    gated = gate_pseudo_labels(T.softmax(weak), 0.5)
    cases["consistency"] = (lambda: consistency_loss(gated, T.softmax(strong)), [strong], [])

    # entropy of softmax rows
    ent_logits = _leaf(rng, (8, C))
    cases["entropy"] = (lambda: entropy(T.softmax(ent_logits)), [ent_logits], [])

    # minimax entropy: the classifier weights see the reversed gradient
    mm = _small_model(rng, C)
    feats = _leaf(rng, (6, 4))
    w = mm.params["classifier.weight"]
    cases["entropy_mme"] = (lambda: unlabeled_entropy(UdaTerm("mme", 1.0), mm, feats), [feats, w], [1.0, -1.0])

    # full objective w.r.t. every model parameter, both variants
    for variant in ("ecacl_p", "ecacl_t"):
        model = _small_model(rng, C)
        views = Views(
            source=rng.random((8, d)),
            landmarks=rng.random((C, d)),
            unlabeled_weak=rng.random((6, d)),
            unlabeled_strong=rng.random((6, d)),
            source_labels=_balanced_labels(rng, 8, C),
            landmark_labels=np.arange(C),
            classes=np.arange(C),
        )
        config = TrainConfig(variant=variant, uda=UdaTerm("ent", 0.1), sigma=0.3, margin=4.0)
        names = list(model.params)
        cases[f"total_{variant}"] = (
            (lambda m=model, c=config, v=views: compute_losses(m, c, v).total),
            [model.params[n] for n in names],
            [],
        )
    return cases


def run_gradcheck(
    seed: int = 0,
    trials: int = 3,
    h: float = DEFAULT_H,
    tol: float = DEFAULT_TOL,
    floor: float = DEFAULT_FLOOR,
) -> List[GradCheckResult]:
    """Every case over ``trials`` random draws; one result per case (worst draw)."""
    rng = np.random.default_rng(seed)
    worst: Dict[str, GradCheckResult] = {}
    for _ in range(trials):
        for name, (build, leaves, signs) in gradcheck_cases(rng).items():
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                res = check_gradient(name, build, leaves, signs, h, tol, floor)
            prev = worst.get(name)
            if prev is None:
                worst[name] = res
            else:
                prev.seconds += res.seconds
                prev.num_coords += res.num_coords
                prev.max_rel_err = max(prev.max_rel_err, res.max_rel_err)
    return list(worst.values())

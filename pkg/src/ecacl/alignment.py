"""Class-level alignment between source samples and target landmarks.

Two losses are provided:

* a prototypical loss, where each class prototype is the mean embedding of
  its landmarks and a source sample is classified by a softmax over negative
  (non-squared) Euclidean distances to the prototypes;
* a triplet loss, where each landmark is paired with its hardest same-class
  source sample and its closest different-class source sample in the batch,
  using squared Euclidean distance.

Applying either one to strongly augmented inputs (and prototypes built from
strongly augmented landmarks) gives the augmentation-enhanced variant; the
functions themselves do not care which views they receive.
"""

from __future__ import annotations

import warnings
from collections import Counter
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from . import tensor as T
from .errors import CoverageError, DimensionError
from .tensor import Tensor

__all__ = [
    "Prototypes",
    "Triplet",
    "EmptyTripletWarning",
    "euclidean_rows",
    "compute_prototypes",
    "proto_class_distribution",
    "prototypical_loss",
    "mine_hard_triplets",
    "triplet_loss",
]


class EmptyTripletWarning(UserWarning):
    pass


@dataclass
class Prototypes:
    """Row k of ``matrix`` is the mean landmark embedding of ``classes[k]``."""

    matrix: Tensor
    counts: List[int]
    classes: List[int]

    def row_of(self, labels: Sequence[int]) -> np.ndarray:
        lookup = {c: k for k, c in enumerate(self.classes)}
        try:
            return np.array([lookup[int(y)] for y in labels], dtype=np.intp)
        except KeyError as exc:
            raise CoverageError(f"no prototype for class {exc.args[0]}") from exc


@dataclass(frozen=True)
class Triplet:
    anchor: int
    positive: int
    negative: int
    anchor_label: int
    positive_label: int
    negative_label: int


def euclidean_rows(a: Tensor, b: Tensor) -> Tensor:
    """Pairwise (non-squared) Euclidean distances between rows."""
    return T.sqrt(T.sq_euclidean_rows(a, b))


def compute_prototypes(
    landmark_embeddings: Tensor,
    labels: Sequence[int],
    classes: Optional[Sequence[int]] = None,
) -> Prototypes:
    """Average landmark embeddings per class.

    ``classes`` fixes which classes get a prototype and in which row order;
    by default it is ``0 .. max(labels)``.  Every listed class must have at
    least one landmark.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if landmark_embeddings.data.ndim != 2 or len(labels) != landmark_embeddings.shape[0]:
        raise DimensionError(
            f"need one label per landmark row, got {len(labels)} labels for {landmark_embeddings.shape}"
        )
    if classes is None:
        classes = range(int(labels.max()) + 1)
    classes = [int(c) for c in classes]
    avg = np.zeros((len(classes), len(labels)))
    counts = []
    for k, c in enumerate(classes):
        members = labels == c
        n = int(members.sum())
        if n == 0:
            raise CoverageError(f"class {c} has no landmarks")
        avg[k, members] = 1.0 / n
        counts.append(n)
    matrix = T.matmul(Tensor(avg), landmark_embeddings)
    return Prototypes(matrix, counts, classes)


def _as_rows(x: Tensor) -> Tensor:
    return T.reshape(x, (1, x.shape[0])) if x.data.ndim == 1 else x


def proto_class_distribution(feature: Tensor, protos: Prototypes) -> Tensor:
    """Softmax over negative Euclidean distances to each prototype.

    Accepts a single feature vector (returns a length-C vector) or a batch of
    row features (returns B x C).
    """
    single = feature.data.ndim == 1
    dist = euclidean_rows(_as_rows(feature), protos.matrix)
    p = T.softmax(T.neg(dist))
    return T.reshape(p, (p.shape[1],)) if single else p


def prototypical_loss(source_embeddings: Tensor, source_labels: Sequence[int], protos: Prototypes) -> Tensor:
    """Mean negative log-probability of each source sample's own class."""
    rows = protos.row_of(source_labels)
    if len(rows) != source_embeddings.shape[0]:
        raise DimensionError(f"{len(rows)} labels for {source_embeddings.shape[0]} embeddings")
    logp = T.log_softmax(T.neg(euclidean_rows(source_embeddings, protos.matrix)))
    return T.neg(T.mean(T.pick(logp, rows)))


def mine_hard_triplets(
    landmark_embeddings,
    landmark_labels: Sequence[int],
    source_embeddings,
    source_labels: Sequence[int],
    tally: Optional[Counter] = None,
) -> List[Triplet]:
    """Pick the farthest same-class and nearest other-class source sample.

    Distances are squared Euclidean on detached values.  Ties go to the
    lowest source index.  Landmarks without a valid positive or negative in
    the batch are skipped and counted under ``tally["skipped"]``.
    """
    L = landmark_embeddings.data if isinstance(landmark_embeddings, Tensor) else np.asarray(landmark_embeddings)
    S = source_embeddings.data if isinstance(source_embeddings, Tensor) else np.asarray(source_embeddings)
    if L.shape[1] != S.shape[1]:
        raise DimensionError(f"embedding widths differ: {L.shape} vs {S.shape}")
    yl = np.asarray(landmark_labels)
    ys = np.asarray(source_labels)
    diff = L[:, None, :] - S[None, :, :]
    d = np.einsum("ijk,ijk->ij", diff, diff)
    same = yl[:, None] == ys[None, :]
    pos_d = np.where(same, d, -np.inf)
    neg_d = np.where(same, np.inf, d)
    out = []
    for i in range(len(yl)):
        if not same[i].any() or same[i].all():
            if tally is not None:
                tally["skipped"] += 1
            continue
        p = int(np.argmax(pos_d[i]))
        n = int(np.argmin(neg_d[i]))
        out.append(Triplet(i, p, n, int(yl[i]), int(ys[p]), int(ys[n])))
    return out


def triplet_loss(
    triplets: Sequence[Triplet],
    landmark_embeddings: Tensor,
    source_embeddings: Tensor,
    margin: float = 1.0,
) -> Tensor:
    """Mean hinge [d(anchor, pos)^2 - d(anchor, neg)^2 + margin]_+ over triplets."""
    if margin < 0:
        raise ValueError(f"margin must be nonnegative, got {margin}")
    if not triplets:
        warnings.warn("no valid triplets in batch; triplet loss is 0", EmptyTripletWarning, stacklevel=2)
        return Tensor(0.0)
    a = T.take_rows(landmark_embeddings, [t.anchor for t in triplets])
    p = T.take_rows(source_embeddings, [t.positive for t in triplets])
    n = T.take_rows(source_embeddings, [t.negative for t in triplets])
    dp = a - p
    dn = a - n
    gap = T.sub(T.row_sum(T.mul(dp, dp)), T.row_sum(T.mul(dn, dn)))
    hinge = T.relu(T.add(gap, Tensor(np.full(len(triplets), float(margin)))))
    return T.mean(hinge)

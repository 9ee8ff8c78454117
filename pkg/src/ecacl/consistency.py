"""Confidence-gated pseudo-labelling between weak and strong views."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError
from .tensor import Tensor

__all__ = ["GatedPseudoBatch", "gate_pseudo_labels", "consistency_loss", "LOG_CLAMP"]

LOG_CLAMP = 1e-12
ROW_SUM_TOL = 1e-9


@dataclass(frozen=True)
class GatedPseudoBatch:
    pseudo_labels: List[int]
    mask: List[bool]
    confidences: List[float]
    threshold: float

    @property
    def num_passed(self) -> int:
        return sum(self.mask)


def gate_pseudo_labels(p_w, sigma: float) -> GatedPseudoBatch:
    """Argmax pseudo-labels of the weak view, kept where max prob >= sigma.

    ``p_w`` is read as plain numbers, so nothing upstream of it receives a
    gradient through the consistency loss.
    """
    P = p_w.data if isinstance(p_w, Tensor) else np.asarray(p_w, dtype=np.float64)
    if P.ndim != 2:
        raise DimensionError(f"p_w must be B x C, got shape {P.shape}")
    if not 0.0 <= sigma <= 1.0:
        raise ContractError(f"sigma must lie in [0, 1], got {sigma}")
    sums = P.sum(axis=1)
    bad = np.flatnonzero(np.abs(sums - 1.0) > ROW_SUM_TOL)
    if bad.size:
        raise ContractError(f"row {int(bad[0])} of p_w sums to {sums[bad[0]]!r}, not 1")
    labels = np.argmax(P, axis=1)
    conf = P[np.arange(len(P)), labels]
    return GatedPseudoBatch(
        pseudo_labels=[int(y) for y in labels],
        mask=[bool(c >= sigma) for c in conf],
        confidences=[float(c) for c in conf],
        threshold=float(sigma),
    )


def consistency_loss(gated: GatedPseudoBatch, p_s: Tensor, diagnostics: Optional[Counter] = None) -> Tensor:
    """Cross-entropy of strong-view probabilities against gated pseudo-labels.

    Summed over samples that pass the gate and divided by the full batch
    size.  Probabilities below ``LOG_CLAMP`` at a pseudo-label are clamped
    before the log and counted under ``diagnostics["clamped"]``.
    """
    B = len(gated.mask)
    if p_s.data.ndim != 2 or p_s.shape[0] != B:
        raise DimensionError(f"p_s has shape {p_s.shape}, expected {B} rows")
    keep = np.flatnonzero(gated.mask)
    if keep.size == 0:
        return Tensor(0.0)
    labels = np.asarray(gated.pseudo_labels)[keep]
    picked = T.pick(T.take_rows(p_s, keep), labels)
    if diagnostics is not None:
        diagnostics["clamped"] += int(np.sum(picked.data < LOG_CLAMP))
    nll = T.neg(T.log(T.clamp_min(picked, LOG_CLAMP)))
    return T.scale(T.total(nll), 1.0 / B)

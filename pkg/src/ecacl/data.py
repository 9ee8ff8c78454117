"""Datasets, synthetic domains, landmark splits and class-balanced batches."""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Tuple, Union

import numpy as np

from .augment import rotate_batch
from .errors import ConfigError, CoverageError, FormatError, LengthError

__all__ = [
    "DomainDataset",
    "UnlabeledSet",
    "SplitSpec",
    "ShiftSpec",
    "BalancedBatch",
    "IDX_IMAGES_MAGIC",
    "IDX_LABELS_MAGIC",
    "load_idx",
    "write_idx",
    "generate_synthetic",
    "apply_shift",
    "select_landmarks",
    "balanced_batches",
]

IDX_LABELS_MAGIC = 0x00000801
IDX_IMAGES_MAGIC = 0x00000803
IDX_RGB_MAGIC = 0x00000804

PathLike = Union[str, os.PathLike]


@dataclass(frozen=True)
class DomainDataset:
    """Labelled images of one domain; ``images`` is (N, H, W, C) in [0, 1]."""

    images: np.ndarray
    labels: np.ndarray
    domain: str = "source"
    num_classes: int = 0

    def __post_init__(self):
        images = np.asarray(self.images, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if images.ndim == 3:
            images = images[..., None]
        if images.ndim != 4 or len(images) != len(labels):
            raise ConfigError(f"{len(labels)} labels for images of shape {images.shape}")
        num_classes = self.num_classes or (int(labels.max()) + 1 if len(labels) else 0)
        if len(labels) and (labels.min() < 0 or labels.max() >= num_classes):
            raise ConfigError(f"labels must lie in [0, {num_classes})")
        if self.domain not in ("source", "target"):
            raise ConfigError(f"domain must be 'source' or 'target', got {self.domain!r}")
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "num_classes", num_classes)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def image_shape(self) -> Tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def subset(self, idx) -> "DomainDataset":
        idx = np.asarray(idx, dtype=np.intp)
        return DomainDataset(self.images[idx], self.labels[idx], self.domain, self.num_classes)

    def class_indices(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.labels == k)


class UnlabeledSet:
    """Target images whose labels are held back from training code.

    Labels can only be read through :meth:`labels_for_evaluation`.
    """

    def __init__(self, images: np.ndarray, labels: np.ndarray, indices: np.ndarray, num_classes: int):
        self.images = images
        self.indices = indices
        self.num_classes = num_classes
        self._hidden = labels

    def __len__(self) -> int:
        return len(self.indices)

    @property
    def labels(self):
        raise AttributeError("unlabeled target labels are hidden; use labels_for_evaluation()")

    def labels_for_evaluation(self) -> np.ndarray:
        return self._hidden

    def as_eval_dataset(self) -> DomainDataset:
        return DomainDataset(self.images, self._hidden, "target", self.num_classes)


# --- IDX ----------------------------------------------------------------------


def _read(path: PathLike) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc


def _parse_idx(blob: bytes, path, magics) -> Tuple[tuple, bytes]:
    if len(blob) < 4:
        raise LengthError(f"{path}: file too short for an IDX header ({len(blob)} bytes)")
    (magic,) = struct.unpack(">I", blob[:4])
    if magic not in magics:
        expected = " or ".join(f"0x{m:08x}" for m in magics)
        raise FormatError(f"{path}: bad IDX magic {blob[:4].hex()} (0x{magic:08x}), expected {expected}")
    ndim = magic & 0xFF
    if len(blob) < 4 + 4 * ndim:
        raise LengthError(f"{path}: truncated IDX header")
    dims = struct.unpack(f">{ndim}I", blob[4:4 + 4 * ndim])
    payload = blob[4 + 4 * ndim:]
    need = int(np.prod(dims, dtype=np.int64))
    if len(payload) != need:
        raise LengthError(f"{path}: payload has {len(payload)} bytes, header implies {need}")
    return dims, payload


def load_idx(
    images_path: PathLike,
    labels_path: PathLike,
    domain: str = "source",
    num_classes: int = 0,
) -> DomainDataset:
    """Read an IDX image/label pair; pixel bytes are divided by 255."""
    dims, payload = _parse_idx(_read(images_path), images_path, (IDX_IMAGES_MAGIC, IDX_RGB_MAGIC))
    images = np.frombuffer(payload, dtype=np.uint8).reshape(dims).astype(np.float64) / 255.0
    ldims, lpayload = _parse_idx(_read(labels_path), labels_path, (IDX_LABELS_MAGIC,))
    labels = np.frombuffer(lpayload, dtype=np.uint8).astype(np.int64)
    if ldims[0] != dims[0]:
        raise LengthError(f"{dims[0]} images but {ldims[0]} labels")
    return DomainDataset(images, labels, domain, num_classes)


def _idx_bytes(magic: int, arr: np.ndarray) -> bytes:
    header = struct.pack(">I", magic) + struct.pack(f">{arr.ndim}I", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype=np.uint8).tobytes()


def write_idx(ds: DomainDataset, images_path: PathLike, labels_path: PathLike) -> None:
    """Write images (rounded to bytes) and labels as an IDX pair."""
    pix = np.clip(np.round(ds.images * 255.0), 0, 255).astype(np.uint8)
    if pix.shape[-1] == 1:
        blob = _idx_bytes(IDX_IMAGES_MAGIC, pix[..., 0])
    else:
        blob = _idx_bytes(IDX_RGB_MAGIC, pix)
    if ds.labels.size and ds.labels.max() > 255:
        raise FormatError("IDX labels are single bytes; class ids above 255 cannot be written")
    Path(images_path).write_bytes(blob)
    Path(labels_path).write_bytes(_idx_bytes(IDX_LABELS_MAGIC, ds.labels.astype(np.uint8)))


# --- synthetic domains --------------------------------------------------------


def _glyph(size: int, k: int, C: int, rng: np.random.Generator, noise_std: float, jitter: float) -> np.ndarray:
    phi = 2 * np.pi * k / C
    mid = (size - 1) / 2.0
    # the blob slides along its class ray, so each class is a connected strip
    radius = size * (0.25 + 0.2 * jitter * (2 * rng.random() - 1))
    ang = phi + jitter * rng.normal(0, 0.05)
    cy = mid - radius * np.cos(ang)
    cx = mid + radius * np.sin(ang)
    theta = phi + (np.pi / 3) * (k % 3) + jitter * rng.normal(0, 0.15)
    major = 0.16 * size * (1.0 + 0.4 * (k % 2)) * (1 + jitter * rng.normal(0, 0.05))
    minor = 0.09 * size
    amp = 1.0 - jitter * abs(rng.normal(0, 0.1))
    r, c = np.meshgrid(np.arange(size) - cy, np.arange(size) - cx, indexing="ij")
    u = r * np.cos(theta) + c * np.sin(theta)
    v = -r * np.sin(theta) + c * np.cos(theta)
    img = amp * np.exp(-0.5 * ((u / major) ** 2 + (v / minor) ** 2))
    if noise_std > 0:
        img = img + rng.normal(0, noise_std, img.shape)
    return np.clip(img, 0.0, 1.0)


def generate_synthetic(
    num_classes: int = 8,
    per_class: int = 200,
    image_size: int = 16,
    base_seed: int = 0,
    noise_std: float = 0.1,
    jitter: float = 1.0,
    channels: int = 1,
) -> DomainDataset:
    """Render ``per_class`` noisy copies of an elongated Gaussian glyph per class.

    Class k lies on the ray at angle 2*pi*k/C from the image centre with a
    class-specific orientation and length.  Samples slide along the ray
    (radius 0.25*size +- 0.2*size*jitter), so a single labeled example covers
    only part of its class while unlabeled samples connect the rest.  Each
    sample is a pure function of (base_seed, class, index); ``jitter`` scales
    every per-sample variation and ``noise_std`` the additive pixel noise.
    """
    if num_classes < 2 or per_class < 1:
        raise ConfigError(f"need num_classes >= 2 and per_class >= 1, got {num_classes}, {per_class}")
    if image_size < 8:
        raise ConfigError(f"image_size {image_size} is too small to separate glyphs (need >= 8)")
    if channels not in (1, 3):
        raise ConfigError(f"channels must be 1 or 3, got {channels}")
    images = np.empty((num_classes * per_class, image_size, image_size, channels))
    labels = np.repeat(np.arange(num_classes), per_class)
    for k in range(num_classes):
        for i in range(per_class):
            rng = np.random.default_rng([base_seed, k, i])
            g = _glyph(image_size, k, num_classes, rng, noise_std, jitter)
            if channels == 3:
                tint = 0.6 + 0.4 * np.array([np.cos(k), np.cos(k + 2.1), np.cos(k + 4.2)]) ** 2
                images[k * per_class + i] = g[..., None] * tint
            else:
                images[k * per_class + i, ..., 0] = g
    return DomainDataset(images, labels, "source", num_classes)


@dataclass
class ShiftSpec:
    rotation_degrees: float = 30.0
    intensity_invert: bool = True
    noise_std: float = 0.0
    hue_shift: float = 0.0

    def __post_init__(self):
        if self.noise_std < 0:
            raise ConfigError(f"noise_std must be nonnegative, got {self.noise_std}")


def _hue_rotate(X: np.ndarray, degrees: float) -> np.ndarray:
    t = np.deg2rad(degrees)
    c, s = np.cos(t), np.sin(t)
    k = 1.0 / 3.0
    q = np.sqrt(k)
    # rotation about the grey axis (1, 1, 1)
    m = np.array([
        [c + (1 - c) * k, k * (1 - c) - q * s, k * (1 - c) + q * s],
        [k * (1 - c) + q * s, c + k * (1 - c), k * (1 - c) - q * s],
        [k * (1 - c) - q * s, k * (1 - c) + q * s, c + k * (1 - c)],
    ])
    return X @ m.T


def apply_shift(ds: DomainDataset, shift: ShiftSpec, seed: int = 0) -> DomainDataset:
    """Turn a dataset into a shifted target domain: rotate, invert, tint, add noise."""
    X = ds.images
    if shift.rotation_degrees:
        X = rotate_batch(X, shift.rotation_degrees)
    if shift.intensity_invert:
        X = 1.0 - X
    if shift.hue_shift and X.shape[-1] == 3:
        X = _hue_rotate(X, shift.hue_shift)
    if shift.noise_std > 0:
        X = X + np.random.default_rng(seed).normal(0, shift.noise_std, X.shape)
    return DomainDataset(np.clip(X, 0.0, 1.0), ds.labels, "target", ds.num_classes)


# --- landmark split -------------------------------------------------------------


@dataclass
class SplitSpec:
    shots_per_class: int = 1
    split_seed: int = 0


def select_landmarks(target: DomainDataset, spec: SplitSpec) -> Tuple[DomainDataset, UnlabeledSet]:
    """Draw ``shots_per_class`` landmarks per class; everything else is unlabeled."""
    k = spec.shots_per_class
    if k < 1:
        raise ConfigError(f"shots_per_class must be >= 1, got {k}")
    rng = np.random.default_rng(spec.split_seed)
    chosen = []
    for c in range(target.num_classes):
        pool = target.class_indices(c)
        if len(pool) < k:
            raise CoverageError(f"class {c} has {len(pool)} target samples, fewer than {k} shots")
        chosen.append(np.sort(rng.choice(pool, size=k, replace=False)))
    lm_idx = np.concatenate(chosen)
    rest = np.setdiff1d(np.arange(len(target)), lm_idx)
    landmarks = target.subset(lm_idx)
    unlabeled = UnlabeledSet(target.images[rest], target.labels[rest], rest, target.num_classes)
    return landmarks, unlabeled


# --- class-balanced sampling -----------------------------------------------------


@dataclass
class BalancedBatch:
    """One class-balanced batch; image arrays are (n, H, W, C)."""

    classes: np.ndarray
    source_idx: np.ndarray
    source_labels: np.ndarray
    landmark_idx: np.ndarray
    landmark_labels: np.ndarray
    unlabeled_idx: np.ndarray
    source_images: np.ndarray = field(repr=False)
    landmark_images: np.ndarray = field(repr=False)
    unlabeled_images: np.ndarray = field(repr=False)

    @property
    def labeled_size(self) -> int:
        return len(self.source_idx) + len(self.landmark_idx)


def balanced_batches(
    source: DomainDataset,
    landmarks: DomainDataset,
    unlabeled: UnlabeledSet,
    M: int,
    N_s: int,
    N_t: int,
    N_u: int,
    epoch_seed: int,
    start: int = 0,
    count: Optional[int] = None,
) -> Iterator[BalancedBatch]:
    """Yield batches of M random classes with N_s source and N_t landmark samples each.

    Batch ``b`` is drawn from ``default_rng([epoch_seed, b])`` in a fixed
    order: class choice, then per class source and landmark picks, then the
    unlabeled sample.  Source classes with fewer than N_s images are sampled
    with replacement.
    """
    C = source.num_classes
    if M > C or M < 1:
        raise ConfigError(f"M must lie in [1, {C}], got {M}")
    if min(N_s, N_t) < 1 or N_u < 0:
        raise ConfigError(f"N_s and N_t must be >= 1 and N_u >= 0, got {N_s}, {N_t}, {N_u}")
    src_pools = [source.class_indices(c) for c in range(C)]
    lm_pools = [landmarks.class_indices(c) for c in range(C)]
    b = start
    while count is None or b < start + count:
        rng = np.random.default_rng([epoch_seed, b])
        classes = np.sort(rng.choice(C, size=M, replace=False))
        s_idx, l_idx = [], []
        for c in classes:
            pool = src_pools[c]
            if len(pool) == 0:
                raise CoverageError(f"source has no samples of class {c}")
            s_idx.append(rng.choice(pool, size=N_s, replace=len(pool) < N_s))
            lp = lm_pools[c]
            if len(lp) < N_t:
                raise CoverageError(f"class {c} has {len(lp)} landmarks, fewer than N_t={N_t}")
            l_idx.append(rng.choice(lp, size=N_t, replace=False))
        s_idx = np.concatenate(s_idx)
        l_idx = np.concatenate(l_idx)
        n_u = N_u if len(unlabeled) else 0
        u_idx = rng.choice(len(unlabeled), size=n_u, replace=len(unlabeled) < n_u) if n_u else np.zeros(0, np.intp)
        yield BalancedBatch(
            classes=classes,
            source_idx=s_idx,
            source_labels=source.labels[s_idx],
            landmark_idx=l_idx,
            landmark_labels=landmarks.labels[l_idx],
            unlabeled_idx=u_idx,
            source_images=source.images[s_idx],
            landmark_images=landmarks.images[l_idx],
            unlabeled_images=unlabeled.images[u_idx],
        )
        b += 1

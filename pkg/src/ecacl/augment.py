"""
Weak and strong image augmentation.

Images are float64 arrays of shape (H, W, C) with values in [0, 1]; batches
are (N, H, W, C).  Every random quantity an augmentation needs is drawn up
front as a fixed-length vector of uniforms, so an image's output depends only
on its own draws.  The batch entry points derive those draws from a per-sample
64-bit seed with a counter-based hash, which makes results independent of how
a batch is split across workers.

Strong augmentation samples ``num_ops`` transforms with replacement from the
op set, applies them in order and finishes with Cutout.  Each op draws a
signed strength uniformly in [-1, 1]; ``magnitude`` times that strength maps
linearly onto the op's range:

============  ===========================================
rotate        +-30 degrees * magnitude
translate_*   +-0.3 * side * magnitude pixels
shear_*       +-0.3 * magnitude
brightness    factor 1 +- 0.9 * magnitude
contrast      factor 1 +- 0.9 * magnitude (around the image mean)
invert        applied with probability = magnitude
solarize      invert pixels above 1 - 0.5 * magnitude
posterize     keep 8 - round(4 * magnitude) bits
equalize      applied with probability = magnitude
============  ===========================================
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence, Tuple

import numpy as np

from .errors import ConfigError, ShapeError

__all__ = [
    "OPS",
    "WeakAugSpec",
    "StrongAugSpec",
    "as_image",
    "derive_seeds",
    "uniforms",
    "weak_augment",
    "strong_augment",
    "cutout",
    "cutout_bounds",
    "translate",
    "hflip",
    "apply_op",
    "weak_augment_batch",
    "strong_augment_batch",
    "rotate_batch",
]

OPS = (
    "rotate",
    "translate_x",
    "translate_y",
    "shear_x",
    "shear_y",
    "brightness",
    "contrast",
    "invert",
    "solarize",
    "posterize",
    "equalize",
)

CUTOUT_FILL = 0.5

# pipeline ids used when deriving per-sample seeds
PIPE_STRONG_SOURCE = 0
PIPE_STRONG_LANDMARK = 1
PIPE_STRONG_UNLABELED = 2
PIPE_WEAK_UNLABELED = 3
PIPE_WEAK_SOURCE = 4
PIPE_WEAK_LANDMARK = 5


@dataclass
class WeakAugSpec:
    flip_prob: float = 0.5
    max_translate_fraction: float = 0.125

    def __post_init__(self):
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ConfigError(f"flip_prob must lie in [0, 1], got {self.flip_prob}")
        if not 0.0 <= self.max_translate_fraction <= 0.5:
            raise ConfigError(f"max_translate_fraction must lie in [0, 0.5], got {self.max_translate_fraction}")

    @property
    def num_draws(self) -> int:
        return 3


@dataclass
class StrongAugSpec:
    """RandAugment-style chain followed by Cutout.

    ``cutout_fraction=0`` disables Cutout (used to test the zero-magnitude
    identity); otherwise it must lie in (0, 1].
    """

    num_ops: int = 2
    magnitude: float = 0.5
    op_set: Tuple[str, ...] = field(default_factory=lambda: OPS)
    cutout_fraction: float = 0.5

    def __post_init__(self):
        self.op_set = tuple(self.op_set)
        if self.num_ops < 1:
            raise ConfigError(f"num_ops must be >= 1, got {self.num_ops}")
        if not 0.0 <= self.magnitude <= 1.0:
            raise ConfigError(f"magnitude must lie in [0, 1], got {self.magnitude}")
        if not self.op_set:
            raise ConfigError("op_set must not be empty")
        unknown = sorted(set(self.op_set) - set(OPS))
        if unknown:
            raise ConfigError(f"unknown augmentation ops {unknown}")
        if not 0.0 <= self.cutout_fraction <= 1.0:
            raise ConfigError(f"cutout_fraction must lie in [0, 1], got {self.cutout_fraction}")

    @property
    def num_draws(self) -> int:
        return 2 * self.num_ops + 2


def as_image(img) -> np.ndarray:
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise ShapeError(f"image must be H x W x C with C in (1, 3), got {arr.shape}")
    return arr


# --- counter-based randomness -------------------------------------------------

_M64 = (1 << 64) - 1
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


def _splitmix(z: np.ndarray) -> np.ndarray:
    z = z.astype(np.uint64, copy=True)
    with np.errstate(over="ignore"):
        z += _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        z = z ^ (z >> np.uint64(31))
    return z


def derive_seeds(run_seed: int, epoch: int, sample_index, pipeline_id: int) -> np.ndarray:
    """Hash (run_seed, epoch, sample_index, pipeline_id) to 64-bit seeds."""
    idx = np.atleast_1d(np.asarray(sample_index, dtype=np.uint64))
    h = _splitmix(np.full(idx.shape, np.uint64(run_seed & _M64)))
    for part in (np.uint64(epoch & _M64), np.uint64(pipeline_id & _M64)):
        with np.errstate(over="ignore"):
            h = _splitmix(h ^ part)
    with np.errstate(over="ignore"):
        return _splitmix(h ^ idx)


def uniforms(seeds: np.ndarray, k: int) -> np.ndarray:
    """k uniforms in [0, 1) per seed, shape (len(seeds), k)."""
    seeds = np.asarray(seeds, dtype=np.uint64)
    with np.errstate(over="ignore"):
        ctr = seeds[:, None] + np.arange(1, k + 1, dtype=np.uint64)[None, :] * _GOLDEN
    bits = _splitmix(ctr) >> np.uint64(11)
    return bits.astype(np.float64) * (1.0 / (1 << 53))


# --- geometry -----------------------------------------------------------------


def _gather(X: np.ndarray, r: np.ndarray, c: np.ndarray) -> np.ndarray:
    """X[n, r, c] with zeros outside the image; r, c are integer (n, H, W)."""
    n, H, W, _ = X.shape
    ok = (r >= 0) & (r < H) & (c >= 0) & (c < W)
    rr = np.minimum(np.maximum(r, 0), H - 1)
    cc = np.minimum(np.maximum(c, 0), W - 1)
    out = X[np.arange(n)[:, None, None], rr, cc]
    return out * ok[..., None]


def _bilinear(X: np.ndarray, sr: np.ndarray, sc: np.ndarray) -> np.ndarray:
    """Sample X at fractional (row, col) positions, treating the outside as 0."""
    n, H, W, C = X.shape
    stride = W + 2
    Xp = np.zeros((C, n, H + 2, stride))
    Xp[:, :, 1:-1, 1:-1] = X.transpose(3, 0, 1, 2)
    flat = Xp.reshape(C, -1)
    r0 = np.floor(sr)
    c0 = np.floor(sc)
    fr = sr - r0
    fc = sc - c0
    # anything more than one pixel outside reads only padding, so it is zeroed
    keep = (sr >= -1) & (sr < H) & (sc >= -1) & (sc < W)
    # shift into padded coordinates; clamped entries are masked by ``keep``
    r0 = np.minimum(np.maximum(r0.astype(np.intp) + 1, 0), H)
    c0 = np.minimum(np.maximum(c0.astype(np.intp) + 1, 0), W)
    i00 = ((np.arange(n) * (H + 2) * stride)[:, None, None] + r0 * stride + c0).ravel()
    w1r = fr * keep
    w0r = keep - w1r
    out = (flat[:, i00] * (w0r * (1 - fc)).ravel() + flat[:, i00 + 1] * (w0r * fc).ravel()
           + flat[:, i00 + stride] * (w1r * (1 - fc)).ravel() + flat[:, i00 + stride + 1] * (w1r * fc).ravel())
    return out.reshape(C, n, H, W).transpose(1, 2, 3, 0)


_GRIDS: dict = {}


def _centred_grid(H: int, W: int):
    key = (H, W)
    if key not in _GRIDS:
        cy, cx = (H - 1) / 2.0, (W - 1) / 2.0
        rr, cc = np.meshgrid(np.arange(H) - cy, np.arange(W) - cx, indexing="ij")
        _GRIDS[key] = (cy, cx, rr, cc)
    return _GRIDS[key]


def _affine(X: np.ndarray, mats: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """Resample with src = mats @ (dst - centre) + centre + offsets (row, col)."""
    n, H, W, _ = X.shape
    cy, cx, rr, cc = _centred_grid(H, W)
    sr = mats[:, 0, 0, None, None] * rr + mats[:, 0, 1, None, None] * cc + (cy + offsets[:, 0])[:, None, None]
    sc = mats[:, 1, 0, None, None] * rr + mats[:, 1, 1, None, None] * cc + (cx + offsets[:, 1])[:, None, None]
    return _bilinear(X, sr, sc)


def rotate_batch(X: np.ndarray, degrees) -> np.ndarray:
    """Rotate each image counter-clockwise about its centre, zero padded."""
    t = np.deg2rad(np.broadcast_to(np.asarray(degrees, dtype=np.float64), (len(X),)))
    cos, sin = np.cos(t), np.sin(t)
    # inverse map of a counter-clockwise rotation in (row, col) with rows pointing down
    mats = np.stack([np.stack([cos, sin], -1), np.stack([-sin, cos], -1)], 1)
    return _affine(X, mats, np.zeros((len(X), 2)))


def translate(img: np.ndarray, dx: int, dy: int) -> np.ndarray:
    """Shift by whole pixels: +dx moves content right, +dy moves it down."""
    X = as_image(img)[None]
    return _shift_batch(X, np.array([dy]), np.array([dx]))[0]


def _shift_batch(X: np.ndarray, dy: np.ndarray, dx: np.ndarray) -> np.ndarray:
    n, H, W, _ = X.shape
    r = np.arange(H)[None, :, None] - dy[:, None, None]
    c = np.arange(W)[None, None, :] - dx[:, None, None]
    r, c = np.broadcast_arrays(r, c)
    return _gather(X, r, c)


def hflip(img: np.ndarray) -> np.ndarray:
    return as_image(img)[:, ::-1, :].copy()


# --- ops ----------------------------------------------------------------------


def _equalize_one(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    n = x.shape[0] * x.shape[1]
    for ch in range(x.shape[2]):
        v = np.clip(np.round(x[:, :, ch] * 255), 0, 255).astype(np.intp)
        cdf = np.cumsum(np.bincount(v.ravel(), minlength=256))
        lo = cdf[v.min()]
        if n == lo:
            out[:, :, ch] = x[:, :, ch]
        else:
            out[:, :, ch] = (cdf[v] - lo) / (n - lo)
    return out


GEOMETRIC = frozenset({"rotate", "translate_x", "translate_y", "shear_x", "shear_y"})


def _geometry(op: str, H: int, W: int, m: float, s: np.ndarray):
    """Inverse-map matrices and offsets (n, 2, 2), (n, 2) for a geometric op at signed strength s."""
    n = len(s)
    mats = np.tile(np.eye(2), (n, 1, 1))
    off = np.zeros((n, 2))
    if op == "rotate":
        t = np.deg2rad(s * 30.0 * m)
        cos, sin = np.cos(t), np.sin(t)
        mats[:, 0, 0], mats[:, 0, 1], mats[:, 1, 0], mats[:, 1, 1] = cos, sin, -sin, cos
    elif op == "translate_x":
        off[:, 1] = -s * 0.3 * W * m
    elif op == "translate_y":
        off[:, 0] = -s * 0.3 * H * m
    elif op == "shear_x":
        mats[:, 1, 0] = -s * 0.3 * m
    elif op == "shear_y":
        mats[:, 0, 1] = -s * 0.3 * m
    return mats, off


def _apply_op(op: str, X: np.ndarray, m: float, s: np.ndarray, gate: np.ndarray) -> np.ndarray:
    """Op at signed strength s in [-1, 1]; unsigned ops use |s|, gated ops fire when gate < m."""
    n, H, W, _ = X.shape
    if op in GEOMETRIC:
        return _affine(X, *_geometry(op, H, W, m, s))
    if op == "brightness":
        return X * (1.0 + s * 0.9 * m)[:, None, None, None]
    if op == "contrast":
        mu = X.mean(axis=(1, 2, 3), keepdims=True)
        return mu + (X - mu) * (1.0 + s * 0.9 * m)[:, None, None, None]
    if op == "invert":
        on = (gate < m)[:, None, None, None]
        return np.where(on, 1.0 - X, X)
    if op == "solarize":
        thr = (1.0 - 0.5 * m * np.abs(s))[:, None, None, None]
        return np.where(X > thr, 1.0 - X, X)
    if op == "posterize":
        drop = np.round(4 * m * np.abs(s)).astype(np.intp)
        mask = ((0xFF << drop) & 0xFF).astype(np.uint8)[:, None, None, None]
        q = np.clip(np.floor(X * 255.0), 0, 255).astype(np.uint8)
        return (q & mask).astype(np.float64) / 255.0
    if op == "equalize":
        out = X.copy()
        for i in np.flatnonzero(gate < m):
            out[i] = _equalize_one(X[i])
        return out
    raise ConfigError(f"unknown augmentation op {op!r}")


def apply_op(img, op: str, magnitude: float, strength: float = 1.0, gate: float = 0.0) -> np.ndarray:
    """Apply a single op to one image with explicit parameters, clamped to [0, 1].

    ``strength`` in [-1, 1] scales the op's range (its sign picks the
    direction of signed ops); gated ops (invert, equalize) fire when
    ``gate < magnitude``.
    """
    X = as_image(img)[None]
    if magnitude == 0:
        return X[0].copy()
    out = _apply_op(op, X, float(magnitude), np.array([float(strength)]), np.array([float(gate)]))
    return np.clip(out[0], 0.0, 1.0)


def cutout_bounds(H: int, W: int, fraction: float, cy: int, cx: int) -> Tuple[int, int, int, int]:
    """Clipped (row_lo, row_hi, col_lo, col_hi) of the Cutout square."""
    side = math.ceil(fraction * min(H, W))
    r0, c0 = cy - side // 2, cx - side // 2
    return max(r0, 0), min(r0 + side, H), max(c0, 0), min(c0 + side, W)


def _cutout_batch(X: np.ndarray, fraction: float, ucy: np.ndarray, ucx: np.ndarray) -> np.ndarray:
    n, H, W, _ = X.shape
    side = math.ceil(fraction * min(H, W))
    cy = np.minimum(np.floor(ucy * H), H - 1).astype(np.intp)
    cx = np.minimum(np.floor(ucx * W), W - 1).astype(np.intp)
    r0 = cy - side // 2
    c0 = cx - side // 2
    rows = np.arange(H)[None, :]
    cols = np.arange(W)[None, :]
    rmask = (rows >= r0[:, None]) & (rows < (r0 + side)[:, None])
    cmask = (cols >= c0[:, None]) & (cols < (c0 + side)[:, None])
    mask = rmask[:, :, None] & cmask[:, None, :]
    return np.where(mask[..., None], CUTOUT_FILL, X)


def cutout(img, fraction: float, rng: np.random.Generator) -> np.ndarray:
    """Fill a random square of side ceil(fraction * min(H, W)) with 0.5."""
    if not 0.0 < fraction <= 1.0:
        raise ConfigError(f"cutout fraction must lie in (0, 1], got {fraction}")
    X = as_image(img)[None]
    u = rng.random(2)
    return _cutout_batch(X, fraction, u[:1], u[1:])[0]


# --- pipelines ----------------------------------------------------------------


def _weak(X: np.ndarray, spec: WeakAugSpec, U: np.ndarray) -> np.ndarray:
    n, H, W, _ = X.shape
    flip = U[:, 0] < spec.flip_prob
    out = np.where(flip[:, None, None, None], X[:, :, ::-1, :], X)
    ty = math.floor(spec.max_translate_fraction * H)
    tx = math.floor(spec.max_translate_fraction * W)
    if tx == 0 and ty == 0:
        return out
    dy = np.minimum(np.floor(U[:, 1] * (2 * ty + 1)), 2 * ty).astype(np.intp) - ty
    dx = np.minimum(np.floor(U[:, 2] * (2 * tx + 1)), 2 * tx).astype(np.intp) - tx
    return _shift_batch(out, dy, dx)


def _strong(X: np.ndarray, spec: StrongAugSpec, U: np.ndarray) -> np.ndarray:
    n, H, W, _ = X.shape
    out = X.copy()
    k = len(spec.op_set)
    m = spec.magnitude
    if m > 0:
        for j in range(spec.num_ops):
            u_op, u_aux = U[:, 2 * j], U[:, 2 * j + 1]
            choice = np.minimum((u_op * k).astype(np.intp), k - 1)
            # the aux draw is a signed strength; its magnitude doubles as the gate
            s = 2.0 * u_aux - 1.0
            gate = np.abs(s)
            mats = np.tile(np.eye(2), (n, 1, 1))
            offs = np.zeros((n, 2))
            geo = np.zeros(n, dtype=bool)
            for o, name in enumerate(spec.op_set):
                sel = np.flatnonzero(choice == o)
                if not sel.size:
                    continue
                if name in GEOMETRIC:
                    mats[sel], offs[sel] = _geometry(name, H, W, m, s[sel])
                    geo[sel] = True
                else:
                    out[sel] = np.clip(_apply_op(name, out[sel], m, s[sel], gate[sel]), 0.0, 1.0)
            g = np.flatnonzero(geo)
            if g.size:
                out[g] = np.clip(_affine(out[g], mats[g], offs[g]), 0.0, 1.0)
    if spec.cutout_fraction > 0:
        out = _cutout_batch(out, spec.cutout_fraction, U[:, -2], U[:, -1])
    return out


def weak_augment(img, spec: WeakAugSpec, rng: np.random.Generator) -> np.ndarray:
    """Random horizontal flip, then an integer translation with zero padding."""
    X = as_image(img)[None]
    return _weak(X, spec, rng.random(spec.num_draws)[None])[0]


def strong_augment(img, spec: StrongAugSpec, rng: np.random.Generator) -> np.ndarray:
    X = as_image(img)[None]
    return _strong(X, spec, rng.random(spec.num_draws)[None])[0]


def _run_chunks(fn, X: np.ndarray, U: np.ndarray, workers: int) -> np.ndarray:
    if workers <= 1 or len(X) < 2:
        return fn(X, U)
    bounds = np.linspace(0, len(X), min(workers, len(X)) + 1).astype(int)
    chunks = [(X[a:b], U[a:b]) for a, b in zip(bounds[:-1], bounds[1:])]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(lambda args: fn(*args), chunks))
    return np.concatenate(parts, axis=0)


def weak_augment_batch(images: np.ndarray, spec: WeakAugSpec, seeds: Sequence[int], workers: int = 1) -> np.ndarray:
    X = np.asarray(images, dtype=np.float64)
    U = uniforms(np.asarray(seeds, dtype=np.uint64), spec.num_draws)
    return _run_chunks(lambda x, u: _weak(x, spec, u), X, U, workers)


def strong_augment_batch(images: np.ndarray, spec: StrongAugSpec, seeds: Sequence[int], workers: int = 1) -> np.ndarray:
    X = np.asarray(images, dtype=np.float64)
    U = uniforms(np.asarray(seeds, dtype=np.uint64), spec.num_draws)
    return _run_chunks(lambda x, u: _strong(x, spec, u), X, U, workers)

"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"ECKL"  u32 version
    repeated until EOF:
        u16 name_len, name (UTF-8), u8 rank, rank x u64 dims,
        prod(dims) x f64 payload

Model parameters are stored under their parameter names.  Scalars that are
needed to rebuild the classifier (``meta.normalize``, ``meta.temperature``)
and the group learning rates (``meta.lr.body``, ``meta.lr.head``) are stored
as rank-0 arrays.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path
from typing import Dict, Union

import numpy as np

from .errors import FormatError, LengthError
from .models import ClassifierSpec, EncoderSpec, Model
from .tensor import Tensor

MAGIC = b"ECKL"
VERSION = 1

PathLike = Union[str, os.PathLike]


def encode_arrays(arrays: Dict[str, np.ndarray]) -> bytes:
    out = [MAGIC, struct.pack("<I", VERSION)]
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)))
        out.append(raw)
        out.append(struct.pack("<B", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        out.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(out)


def decode_arrays(blob: bytes) -> Dict[str, np.ndarray]:
    if len(blob) < 8:
        raise LengthError(f"checkpoint too short: {len(blob)} bytes")
    if blob[:4] != MAGIC:
        raise FormatError(f"bad checkpoint magic {blob[:4]!r}, expected {MAGIC!r}")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    pos = 8
    arrays: Dict[str, np.ndarray] = {}

    def need(n: int, what: str) -> None:
        if pos + n > len(blob):
            raise LengthError(f"checkpoint truncated reading {what} at byte {pos}")

    while pos < len(blob):
        need(2, "name length")
        (nlen,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        need(nlen, "name")
        try:
            name = blob[pos:pos + nlen].decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"array name at byte {pos} is not UTF-8") from exc
        pos += nlen
        need(1, "rank")
        rank = blob[pos]
        pos += 1
        need(8 * rank, "dims")
        dims = struct.unpack_from(f"<{rank}Q", blob, pos)
        pos += 8 * rank
        count = int(np.prod(dims, dtype=np.uint64)) if rank else 1
        need(8 * count, f"payload of {name!r}")
        arrays[name] = np.frombuffer(blob, dtype="<f8", count=count, offset=pos).reshape(dims).astype(np.float64)
        pos += 8 * count
    return arrays


def model_arrays(model: Model) -> Dict[str, np.ndarray]:
    arrays = {name: p.data for name, p in model.params.items()}
    arrays["meta.normalize"] = np.array(1.0 if model.classifier.normalize else 0.0)
    arrays["meta.temperature"] = np.array(model.classifier.temperature)
    arrays["meta.lr.body"] = np.array(model.base_lr["body"])
    arrays["meta.lr.head"] = np.array(model.base_lr["head"])
    return arrays


def model_from_arrays(arrays: Dict[str, np.ndarray]) -> Model:
    try:
        layers = 0
        while f"encoder.{layers}.weight" in arrays:
            layers += 1
        if layers == 0:
            raise FormatError("checkpoint has no encoder weights")
        shapes = [arrays[f"encoder.{i}.weight"].shape for i in range(layers)]
        enc = EncoderSpec(
            input_dim=shapes[0][0],
            hidden_dims=[s[1] for s in shapes[:-1]],
            embed_dim=shapes[-1][1],
        )
        w = arrays["classifier.weight"]
        cls = ClassifierSpec(
            embed_dim=w.shape[0],
            num_classes=w.shape[1],
            normalize=bool(arrays["meta.normalize"] != 0),
            temperature=float(arrays["meta.temperature"]),
        )
        base_lr = {"body": float(arrays["meta.lr.body"]), "head": float(arrays["meta.lr.head"])}
    except KeyError as exc:
        raise FormatError(f"checkpoint is missing array {exc.args[0]!r}") from exc
    params = {
        name: Tensor(arr, requires_grad=True, name=name)
        for name, arr in arrays.items()
        if not name.startswith("meta.")
    }
    return Model(enc, cls, params, base_lr)


def save_checkpoint(model: Model, path: PathLike) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode_arrays(model_arrays(model)))
    os.replace(tmp, path)


def load_checkpoint(path: PathLike) -> Model:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read checkpoint {path}: {exc}") from exc
    return model_from_arrays(decode_arrays(blob))

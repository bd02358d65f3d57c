"""Binary checkpoint format.

Layout (little-endian)::

    b"SRGF1"
    u32 len, config digest (ascii hex)
    u32 len, config JSON (utf-8)
    u64 epoch
    u32 block count, then per block:
        u16 name len, name, u8 ndim, u64 dims..., float32 values
    u8 has_adam; if set: u64 step, then "adam.m/<name>" and "adam.v/<name>" blocks
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState
from .config import TrainConfig
from .errors import DataError
from .model import ModelState

MAGIC = b"SRGF1"


def _write_block(fh, name: str, arr: np.ndarray) -> None:
    raw = name.encode()
    fh.write(struct.pack("<H", len(raw)))
    fh.write(raw)
    fh.write(struct.pack("<B", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_exact(fh, n: int) -> bytes:
    b = fh.read(n)
    if len(b) != n:
        raise DataError("truncated checkpoint")
    return b


def _read_block(fh) -> tuple[str, np.ndarray]:
    (nlen,) = struct.unpack("<H", _read_exact(fh, 2))
    name = _read_exact(fh, nlen).decode()
    (ndim,) = struct.unpack("<B", _read_exact(fh, 1))
    shape = struct.unpack(f"<{ndim}Q", _read_exact(fh, 8 * ndim))
    count = int(np.prod(shape)) if ndim else 1
    data = np.frombuffer(_read_exact(fh, 4 * count), dtype="<f4").reshape(shape)
    return name, data.astype(np.float64)


def dumps(state) -> bytes:
    cfg = state.config
    fh = io.BytesIO()
    fh.write(MAGIC)
    for text in (cfg.digest(), cfg.to_json()):
        raw = text.encode()
        fh.write(struct.pack("<I", len(raw)))
        fh.write(raw)
    fh.write(struct.pack("<Q", state.epoch))
    names = sorted(state.params)
    fh.write(struct.pack("<I", len(names)))
    for name in names:
        _write_block(fh, name, state.params[name].value)
    adam = state.adam
    if adam is not None and adam.t > 0:
        fh.write(struct.pack("<BQ", 1, adam.t))
        for name in names:
            _write_block(fh, f"adam.m/{name}", adam.m[name])
            _write_block(fh, f"adam.v/{name}", adam.v[name])
    else:
        fh.write(struct.pack("<B", 0))
    return fh.getvalue()


def save(state, path) -> None:
    Path(path).write_bytes(dumps(state))


def loads(blob: bytes):
    """Return (config, epoch, params, adam_state) from checkpoint bytes."""
    fh = io.BytesIO(blob)
    if fh.read(5) != MAGIC:
        raise DataError("not an SRGF1 checkpoint")
    texts = []
    for _ in range(2):
        (n,) = struct.unpack("<I", _read_exact(fh, 4))
        texts.append(_read_exact(fh, n).decode())
    digest, cfg_json = texts
    cfg = TrainConfig.from_dict(json.loads(cfg_json))
    if cfg.digest() != digest:
        raise DataError("checkpoint config digest mismatch")
    (epoch,) = struct.unpack("<Q", _read_exact(fh, 8))
    (count,) = struct.unpack("<I", _read_exact(fh, 4))
    params = dict(_read_block(fh) for _ in range(count))
    (has_adam,) = struct.unpack("<B", _read_exact(fh, 1))
    adam = AdamState(lr=cfg.lr)
    if has_adam:
        (adam.t,) = struct.unpack("<Q", _read_exact(fh, 8))
        for _ in range(2 * count):
            name, arr = _read_block(fh)
            kind, pname = name.split("/", 1)
            (adam.m if kind == "adam.m" else adam.v)[pname] = arr
    return cfg, epoch, params, adam


def read_config(path) -> TrainConfig:
    p = Path(path)
    if not p.exists():
        raise DataError(f"checkpoint not found: {p}")
    return loads(p.read_bytes())[0]


def load(path, ctx):
    """Rebuild a :class:`ModelState` for ``ctx`` from a checkpoint file."""
    p = Path(path)
    if not p.exists():
        raise DataError(f"checkpoint not found: {p}")
    cfg, epoch, params, adam = loads(p.read_bytes())
    state = ModelState.init(cfg, ctx)
    if set(params) != set(state.params):
        raise DataError("checkpoint parameters do not match the dataset/config")
    for name, arr in params.items():
        if arr.shape != state.params[name].shape:
            raise DataError(f"shape mismatch for {name}: {arr.shape} vs {state.params[name].shape}")
        state.params[name] = ad.parameter(arr, name=name)
    state.adam = adam
    state.epoch = epoch
    return state

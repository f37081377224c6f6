"""Checkpoint format: a single binary file with a versioned header followed
by raw little-endian float64 tensors in declared order, plus a text manifest
sidecar duplicating the shapes for auditability. An optional trailing
section carries optimizer state.
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

from .encoder import EncoderParams, KIND_PRECOMPUTED, KIND_TOY
from .errors import DataError
from .model import Cnn2GramParams, HeadParams, ModelParams

MAGIC = b"CKPE"
VERSION = 1
_KIND_CODES = {KIND_TOY: 0, KIND_PRECOMPUTED: 1}
_KIND_NAMES = {v: k for k, v in _KIND_CODES.items()}
_HEADER = struct.Struct("<4sIIIIIBIB")  # magic, version, d, d_g, k_max, vocab, kind, w, has_opt


def _tensor_order(d: int, d_g: int, k_max: int, vocab_size: int):
    """Declared (name, shape) order of the serialized tensors."""
    order = [("embedding", (vocab_size, d))]
    for n in range(1, k_max + 1):
        order.append((f"kernel_{n}", (n, d, d_g)))
        order.append((f"bias_{n}", (d_g,)))
    order += [("rank_w", (d_g,)), ("rank_b", (1,)), ("chunk_w", (d_g,)), ("chunk_b", (1,))]
    return order


def _all_tensors(params: ModelParams) -> dict[str, np.ndarray]:
    out = {"embedding": params.encoder.embedding_table}
    for n, (k, b) in enumerate(zip(params.conv.kernels, params.conv.biases), start=1):
        out[f"kernel_{n}"] = k
        out[f"bias_{n}"] = b
    out["rank_w"] = params.heads.rank_w
    out["rank_b"] = params.heads.rank_b
    out["chunk_w"] = params.heads.chunk_w
    out["chunk_b"] = params.heads.chunk_b
    return out


def save_model(
    path: str | Path,
    params: ModelParams,
    optimizer_state=None,
    write_manifest: bool = True,
) -> None:
    path = Path(path)
    d, d_g, k_max = params.conv.d, params.conv.d_g, params.conv.k_max
    vocab_size = int(params.encoder.embedding_table.shape[0])
    tensors = _all_tensors(params)
    order = _tensor_order(d, d_g, k_max, vocab_size)
    parts = [
        _HEADER.pack(
            MAGIC,
            VERSION,
            d,
            d_g,
            k_max,
            vocab_size,
            _KIND_CODES[params.encoder.kind],
            params.encoder.mix_window,
            1 if optimizer_state is not None else 0,
        )
    ]
    for name, shape in order:
        arr = tensors[name]
        if tuple(arr.shape) != shape:
            raise DataError(f"tensor {name} has shape {arr.shape}, expected {shape}")
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    if optimizer_state is not None:
        parts.append(struct.pack("<Q", optimizer_state.step))
        for moment in (optimizer_state.m, optimizer_state.v):
            for name, _shape in order:
                if name in moment:
                    parts.append(np.ascontiguousarray(moment[name], dtype="<f8").tobytes())
    path.write_bytes(b"".join(parts))
    if write_manifest:
        lines = [
            f"format=CKPE v{VERSION}",
            f"d={d} d_g={d_g} k_max={k_max} vocab_size={vocab_size}",
            f"encoder_kind={params.encoder.kind} mix_window={params.encoder.mix_window}",
            f"optimizer_state={'yes' if optimizer_state is not None else 'no'}",
        ]
        lines += [f"{name} {shape}" for name, shape in order]
        Path(str(path) + ".manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_model(path: str | Path, dtype=np.float64, with_optimizer: bool = False):
    """Read a checkpoint; returns ModelParams or (ModelParams, OptimizerState)."""
    from .training import OptimizerState  # local import: training depends on model

    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size or raw[:4] != MAGIC:
        raise DataError(f"{path}: not a model checkpoint (bad magic)")
    magic, version, d, d_g, k_max, vocab_size, kind_code, w, has_opt = _HEADER.unpack_from(raw)
    if version != VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    if kind_code not in _KIND_NAMES:
        raise DataError(f"{path}: unknown encoder kind code {kind_code}")
    off = _HEADER.size
    tensors: dict[str, np.ndarray] = {}
    order = _tensor_order(d, d_g, k_max, vocab_size)
    for name, shape in order:
        count = int(np.prod(shape))
        nbytes = count * 8
        if off + nbytes > len(raw):
            raise DataError(f"{path}: truncated checkpoint at tensor {name}")
        tensors[name] = (
            np.frombuffer(raw, dtype="<f8", count=count, offset=off)
            .reshape(shape)
            .astype(dtype)
        )
        off += nbytes
    encoder = EncoderParams(
        embedding_table=tensors["embedding"],
        mix_window=w,
        trainable=kind_code == _KIND_CODES[KIND_TOY],
        kind=_KIND_NAMES[kind_code],
    )
    conv = Cnn2GramParams(
        kernels=[tensors[f"kernel_{n}"] for n in range(1, k_max + 1)],
        biases=[tensors[f"bias_{n}"] for n in range(1, k_max + 1)],
    )
    heads = HeadParams(
        rank_w=tensors["rank_w"],
        rank_b=tensors["rank_b"],
        chunk_w=tensors["chunk_w"],
        chunk_b=tensors["chunk_b"],
    )
    params = ModelParams(encoder=encoder, conv=conv, heads=heads)
    if not with_optimizer:
        return params
    if not has_opt:
        return params, None
    (step,) = struct.unpack_from("<Q", raw, off)
    off += 8
    trainable = list(params.named_parameters())
    moments = []
    for _ in range(2):
        moment = {}
        for name in trainable:
            shape = tensors[name].shape
            count = int(np.prod(shape))
            moment[name] = (
                np.frombuffer(raw, dtype="<f8", count=count, offset=off)
                .reshape(shape)
                .astype(dtype)
            )
            off += count * 8
        moments.append(moment)
    state = OptimizerState(m=moments[0], v=moments[1], step=step)
    return params, state


def model_hash(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()

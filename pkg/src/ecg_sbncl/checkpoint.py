"""The ``SBNC`` checkpoint container.

Layout (little-endian)::

    magic      b"SBNC"
    version    u32
    checksum   u32   CRC-32 of everything after this field
    iteration  u64
    tau        f64
    eps        f64
    seed       u64
    meta       u32 length + UTF-8 JSON (model/head config, optimizer hyperparameters)
    n_tensors  u32
    per tensor: u32 name length + UTF-8 name, u32 rank, rank x u64 dims, f64 data

Tensor names carry a group prefix: ``student/``, ``teacher/``, ``adam_m/``, ``adam_v/``.
"""

from __future__ import annotations

import io
import json
import os
import struct
import zlib
from pathlib import Path

import numpy as np

from .sbncl import HeadConfig, TrainerState
from .vit1d import ModelConfig

MAGIC = b"SBNC"
VERSION = 1
_GROUPS = ("student", "teacher", "adam_m", "adam_v")


class CorruptCheckpoint(ValueError):
    pass


class VersionMismatch(ValueError):
    pass


def dumps_state(state: TrainerState) -> bytes:
    body = io.BytesIO()
    body.write(struct.pack("<QddQ", state.iteration, state.tau, state.eps, state.seed))
    meta = json.dumps(state.metadata(), sort_keys=True).encode("utf-8")
    body.write(struct.pack("<I", len(meta)))
    body.write(meta)
    tensors = [(f"{g}/{k}", v) for g in _GROUPS for k, v in getattr(state, g).items()]
    body.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors:
        raw_name = name.encode("utf-8")
        body.write(struct.pack("<I", len(raw_name)))
        body.write(raw_name)
        body.write(struct.pack("<I", arr.ndim))
        body.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        body.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    payload = body.getvalue()
    return MAGIC + struct.pack("<II", VERSION, zlib.crc32(payload)) + payload


def loads_state(data: bytes) -> TrainerState:
    if len(data) < 12 or data[:4] != MAGIC:
        raise CorruptCheckpoint("not an SBNC checkpoint")
    version, checksum = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise VersionMismatch(f"checkpoint version {version}, expected {VERSION}")
    payload = data[12:]
    if zlib.crc32(payload) != checksum:
        raise CorruptCheckpoint("checksum mismatch (truncated or modified file)")

    pos = 0

    def take(fmt):
        nonlocal pos
        vals = struct.unpack_from(fmt, payload, pos)
        pos += struct.calcsize(fmt)
        return vals

    try:
        iteration, tau, eps, seed = take("<QddQ")
        (meta_len,) = take("<I")
        meta = json.loads(payload[pos : pos + meta_len].decode("utf-8"))
        pos += meta_len
        (n_tensors,) = take("<I")
        groups: dict[str, dict[str, np.ndarray]] = {g: {} for g in _GROUPS}
        for _ in range(n_tensors):
            (n,) = take("<I")
            name = payload[pos : pos + n].decode("utf-8")
            pos += n
            (rank,) = take("<I")
            shape = take(f"<{rank}Q")
            count = int(np.prod(shape)) if rank else 1
            arr = np.frombuffer(payload, dtype="<f8", count=count, offset=pos).astype(np.float64).reshape(shape)
            pos += 8 * count
            group, _, key = name.partition("/")
            groups[group][key] = arr
    except (struct.error, ValueError, KeyError, UnicodeDecodeError) as exc:
        raise CorruptCheckpoint(f"malformed checkpoint body: {exc}") from exc
    if pos != len(payload):
        raise CorruptCheckpoint("trailing bytes after last tensor")

    return TrainerState(
        model=ModelConfig(**meta["model"]),
        heads=HeadConfig(**meta["heads"]),
        student=groups["student"],
        teacher=groups["teacher"],
        adam_m=groups["adam_m"],
        adam_v=groups["adam_v"],
        iteration=iteration,
        tau=tau,
        eps=eps,
        seed=seed,
        lr=meta["lr"],
        beta1=meta["beta1"],
        beta2=meta["beta2"],
        adam_eps=meta["adam_eps"],
        symmetrize=meta["symmetrize"],
    )


def checkpoint_save(state: TrainerState, path: str | os.PathLike) -> None:
    Path(path).write_bytes(dumps_state(state))


def checkpoint_load(path: str | os.PathLike) -> TrainerState:
    return loads_state(Path(path).read_bytes())

"""Checkpoint file format.

Layout: magic ``MPCK``, u32 format version, normalization statistics
(u32 joints, u32 dof, float32 mean then std), u32 record count, then
(u32 name length, name utf-8, u32 ndim, u32 dims..., float32 payload) records
in sorted name order. EMA shadow parameters live under the ``ema/`` prefix,
optimizer state under ``opt/``, bookkeeping under ``meta/``.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .dataset import FeatureStats
from .features import DOF, N_JOINTS

MAGIC = b"MPCK"
VERSION = 1

EMA_PREFIX = "ema/"
OPT_PREFIX = "opt/"
META_PREFIX = "meta/"


class CheckpointError(IOError):
    pass


def save_checkpoint(path: str | Path, records: dict[str, np.ndarray], stats: FeatureStats) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<II", N_JOINTS, DOF))
        fh.write(stats.mean.astype(np.float32).tobytes())
        fh.write(stats.std.astype(np.float32).tobytes())
        fh.write(struct.pack("<I", len(records)))
        for name in sorted(records):
            data = np.asarray(records[name], dtype=np.float32)
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", data.ndim))
            fh.write(struct.pack(f"<{data.ndim}I", *data.shape))
            fh.write(data.tobytes(order="C"))


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], FeatureStats]:
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported format version {version}")
        joints, dof = struct.unpack("<II", fh.read(8))
        if (joints, dof) != (N_JOINTS, DOF):
            raise CheckpointError(f"{path}: unexpected stats layout {joints}x{dof}")
        mean = np.frombuffer(fh.read(joints * dof * 4), dtype=np.float32).reshape(joints, dof)
        std = np.frombuffer(fh.read(joints * dof * 4), dtype=np.float32).reshape(joints, dof)
        (count,) = struct.unpack("<I", fh.read(4))
        records: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", fh.read(4))
            name = fh.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim)) if ndim else ()
            size = int(np.prod(shape)) if shape else 1
            payload = np.frombuffer(fh.read(size * 4), dtype=np.float32)
            if payload.size != size:
                raise CheckpointError(f"{path}: truncated record {name!r}")
            records[name] = payload.reshape(shape).copy()
        return records, FeatureStats(mean.astype(np.float64), std.astype(np.float64))


def split_records(records: dict[str, np.ndarray]) -> tuple[dict, dict, dict, dict]:
    """Partition raw records into (params, ema, opt, meta) name spaces."""
    params, ema, opt, meta = {}, {}, {}, {}
    for name, data in records.items():
        if name.startswith(EMA_PREFIX):
            ema[name[len(EMA_PREFIX):]] = data
        elif name.startswith(OPT_PREFIX):
            opt[name[len(OPT_PREFIX):]] = data
        elif name.startswith(META_PREFIX):
            meta[name[len(META_PREFIX):]] = data
        else:
            params[name] = data
    return params, ema, opt, meta

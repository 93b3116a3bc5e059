"""Clip archives, normalization statistics, synthetic motion, batching.

Archive layout: a directory of binary clip files plus ``manifest.csv`` with
one record per clip (id, source file, start frame, mirrored flag). Clip
binary: magic ``MPZ1``, u32 frame count, u32 joints (21), u32 dof (15), then
row-major float32 values, frame-major.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bvh import RawMotion
from .features import DOF, N_JOINTS, MotionClip, extract_features
from .skeleton import Skeleton, default_skeleton

CLIP_MAGIC = b"MPZ1"


class ArchiveError(IOError):
    pass


def write_clip(path: str | Path, clip: MotionClip) -> None:
    feats = clip.features.astype(np.float32)
    t = len(clip)
    with open(path, "wb") as fh:
        fh.write(CLIP_MAGIC)
        fh.write(struct.pack("<III", t, N_JOINTS, DOF))
        fh.write(feats.tobytes(order="C"))


def read_clip(path: str | Path, fps: int = 60) -> MotionClip:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CLIP_MAGIC:
            raise ArchiveError(f"{path}: bad magic {magic!r}")
        t, joints, dof = struct.unpack("<III", fh.read(12))
        if joints != N_JOINTS or dof != DOF:
            raise ArchiveError(f"{path}: unexpected layout {joints}x{dof}")
        data = np.frombuffer(fh.read(t * joints * dof * 4), dtype=np.float32)
        if data.size != t * joints * dof:
            raise ArchiveError(f"{path}: truncated payload")
    return MotionClip(data.reshape(t, joints, dof).astype(np.float64), fps=fps)


@dataclass
class ManifestRow:
    clip_id: str
    source: str
    start_frame: int
    mirrored: bool


class ClipArchive:
    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.rows: list[ManifestRow] = []
        self._clips: dict[str, MotionClip] = {}

    @property
    def manifest_path(self) -> Path:
        return self.root / "manifest.csv"

    def add(self, clip: MotionClip, clip_id: str, source: str = "", start_frame: int = 0, mirrored: bool = False) -> None:
        self.rows.append(ManifestRow(clip_id, source, start_frame, mirrored))
        self._clips[clip_id] = clip

    def save(self) -> None:
        self.root.mkdir(parents=True, exist_ok=True)
        with open(self.manifest_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["id", "source", "start_frame", "mirrored"])
            for row in self.rows:
                writer.writerow([row.clip_id, row.source, row.start_frame, int(row.mirrored)])
                write_clip(self.root / f"{row.clip_id}.mpz", self._clips[row.clip_id])

    @classmethod
    def load(cls, root: str | Path) -> "ClipArchive":
        archive = cls(root)
        if not archive.manifest_path.exists():
            raise ArchiveError(f"no manifest at {archive.manifest_path}")
        with open(archive.manifest_path, newline="") as fh:
            for rec in csv.DictReader(fh):
                row = ManifestRow(rec["id"], rec["source"], int(rec["start_frame"]), bool(int(rec["mirrored"])))
                archive.rows.append(row)
                archive._clips[row.clip_id] = read_clip(archive.root / f"{row.clip_id}.mpz")
        if not archive.rows:
            raise ArchiveError(f"empty archive at {root}")
        return archive

    def __len__(self) -> int:
        return len(self.rows)

    def clip(self, index_or_id: int | str) -> MotionClip:
        if isinstance(index_or_id, int):
            return self._clips[self.rows[index_or_id].clip_id]
        return self._clips[index_or_id]

    def clips(self) -> list[MotionClip]:
        return [self._clips[r.clip_id] for r in self.rows]


# ---------------------------------------------------------------------------
# normalization statistics


@dataclass
class FeatureStats:
    mean: np.ndarray  # (21, 15)
    std: np.ndarray  # (21, 15)

    @staticmethod
    def identity() -> "FeatureStats":
        return FeatureStats(np.zeros((N_JOINTS, DOF)), np.ones((N_JOINTS, DOF)))

    @staticmethod
    def compute(clips: list[MotionClip], std_floor: float = 1e-4) -> "FeatureStats":
        stacked = np.concatenate([c.features for c in clips], axis=0)
        mean = stacked.mean(axis=0)
        std = np.maximum(stacked.std(axis=0), std_floor)
        return FeatureStats(mean, std)

    def normalize(self, feats: np.ndarray) -> np.ndarray:
        return (feats - self.mean) / self.std

    def denormalize(self, feats: np.ndarray) -> np.ndarray:
        return feats * self.std + self.mean

    def save_csv(self, path: str | Path) -> None:
        rows = np.concatenate([self.mean, self.std], axis=0)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            for row in rows:
                writer.writerow([f"{v:.9g}" for v in row])

    @staticmethod
    def load_csv(path: str | Path) -> "FeatureStats":
        with open(path, newline="") as fh:
            rows = np.array([[float(v) for v in rec] for rec in csv.reader(fh) if rec])
        if rows.shape != (2 * N_JOINTS, DOF):
            raise ArchiveError(f"stats file must be {2 * N_JOINTS}x{DOF}, got {rows.shape}")
        return FeatureStats(rows[:N_JOINTS], rows[N_JOINTS:])


# ---------------------------------------------------------------------------
# synthetic motion (procedural walk cycles with distinct per-seed styles)


def _rx(a: np.ndarray) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    out = np.zeros(a.shape + (3, 3))
    out[..., 0, 0] = 1
    out[..., 1, 1] = c
    out[..., 1, 2] = -s
    out[..., 2, 1] = s
    out[..., 2, 2] = c
    return out


def _rz(a: np.ndarray) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    out = np.zeros(a.shape + (3, 3))
    out[..., 0, 0] = c
    out[..., 0, 1] = -s
    out[..., 1, 0] = s
    out[..., 1, 1] = c
    out[..., 2, 2] = 1
    return out


def synthetic_raw(rng: np.random.Generator, frames: int = 120, skeleton: Skeleton | None = None) -> RawMotion:
    """A parametrized walk: swinging legs, counter-swinging arms, swaying
    spine, steady root advance. Parameters drawn once per call give each clip
    a distinct movement manner."""
    skeleton = skeleton or default_skeleton()
    t = np.arange(frames)
    freq = rng.uniform(0.6, 1.6)  # strides per second
    phase = 2 * np.pi * freq * t / 60.0
    leg_amp = rng.uniform(0.15, 0.6)
    knee_amp = rng.uniform(0.1, 0.5)
    arm_amp = rng.uniform(0.1, 0.7)
    sway_amp = rng.uniform(0.02, 0.15)
    bob_amp = rng.uniform(0.0, 0.02)
    speed = rng.uniform(0.005, 0.03)  # meters per frame
    turn = rng.uniform(-0.3, 0.3) * np.pi / 180.0  # radians per frame

    heading = turn * t
    step = np.stack([np.sin(heading), np.zeros_like(heading), np.cos(heading)], axis=-1) * speed
    root_pos = np.cumsum(step, axis=0)
    root_pos[:, 1] = skeleton.joints[0].offset[1] + bob_amp * np.sin(2 * phase)

    from .features import rot_y  # local import to avoid a cycle

    rotations = np.tile(np.eye(3), (frames, N_JOINTS, 1, 1))
    rotations[:, 0] = rot_y(heading)
    swing = leg_amp * np.sin(phase)
    knee = knee_amp * (0.5 - 0.5 * np.cos(2 * phase))
    rotations[:, 1] = _rx(swing)          # left hip
    rotations[:, 2] = _rx(knee)           # left knee
    rotations[:, 5] = _rx(-swing)         # right hip
    rotations[:, 6] = _rx(knee)           # right knee
    rotations[:, 9] = _rz(sway_amp * np.sin(phase))  # lower spine sway
    rotations[:, 14] = _rx(-arm_amp * np.sin(phase))  # left arm
    rotations[:, 18] = _rx(arm_amp * np.sin(phase))   # right arm
    return RawMotion(root_pos, rotations, fps=60)


def synthetic_clip(seed: int, frames: int = 120, skeleton: Skeleton | None = None) -> MotionClip:
    skeleton = skeleton or default_skeleton()
    raw = synthetic_raw(np.random.default_rng(seed), frames, skeleton)
    return extract_features(raw, skeleton)


def build_synthetic_archive(root: str | Path, n_clips: int = 8, frames: int = 120, seed: int = 0) -> ClipArchive:
    archive = ClipArchive(root)
    for i in range(n_clips):
        clip = synthetic_clip(seed * 1000 + i, frames)
        archive.add(clip, clip_id=f"synth{i:03d}", source="synthetic", start_frame=0)
    archive.save()
    stats = FeatureStats.compute(archive.clips())
    stats.save_csv(Path(root) / "stats.csv")
    return archive


# ---------------------------------------------------------------------------
# batching


def sample_pair_batch(
    archive: ClipArchive,
    stats: FeatureStats,
    batch_size: int,
    rng: np.random.Generator,
    crop_rate: float = 0.2,
    dtype=np.float64,
) -> tuple[np.ndarray, np.ndarray]:
    """Draw (source, target) pairs independently and uniformly; each drawn
    clip is temporally re-cropped with probability ``crop_rate``."""
    from .features import temporal_random_crop

    def draw() -> np.ndarray:
        idx = int(rng.integers(0, len(archive)))
        clip = archive.clip(idx)
        if rng.random() < crop_rate:
            clip = temporal_random_crop(clip, rng)
        return stats.normalize(clip.features)

    src = np.stack([draw() for _ in range(batch_size)]).astype(dtype)
    tar = np.stack([draw() for _ in range(batch_size)]).astype(dtype)
    return src, tar

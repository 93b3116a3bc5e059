"""Pose-feature extraction and the operations on extracted clips.

A clip is a (T, 21, 15) array. Per joint row: local position (3), rotation as
forward/up axis pair (6), positional velocity (3), and the root planar/angular
velocities (3) replicated into every row. Everything is expressed in the
per-frame forward-facing frame: origin at the root ground projection, +Z along
the smoothed character heading.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.spatial.transform import Rotation, Slerp

from .bvh import RawMotion, forward_kinematics
from .skeleton import MIRROR_MAP, Skeleton

DOF = 15
N_JOINTS = 21
POS = slice(0, 3)
ROT = slice(3, 9)
VEL = slice(9, 12)
ROOT = slice(12, 15)

HIP_LEFT = 1
HIP_RIGHT = 5

FACING_SMOOTH_WIDTH = 5


class ExtractionError(ValueError):
    """Degenerate geometry (zero hip vector) during feature extraction."""


@dataclass
class MotionClip:
    features: np.ndarray  # (T, 21, 15)
    fps: int = 60
    skeleton_ref: str = "canonical-21"

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 3 or self.features.shape[1:] != (N_JOINTS, DOF):
            raise ValueError(f"clip features must be (T, 21, 15), got {self.features.shape}")
        if len(self.features) < 1:
            raise ValueError("clip must have at least one frame")

    def __len__(self) -> int:
        return len(self.features)

    @property
    def positions(self) -> np.ndarray:
        return self.features[:, :, POS]

    @property
    def rotations6(self) -> np.ndarray:
        return self.features[:, :, ROT]

    @property
    def velocities(self) -> np.ndarray:
        return self.features[:, :, VEL]

    @property
    def root_track(self) -> np.ndarray:
        """(T, 3) of (dx, dz, dangle); rows are replicated, joint 0 is read."""
        return self.features[:, 0, ROOT]


def rot_y(angle: float | np.ndarray) -> np.ndarray:
    """Rotation about the vertical axis; accepts scalars or arrays of angles."""
    angle = np.asarray(angle)
    c, s = np.cos(angle), np.sin(angle)
    out = np.zeros(angle.shape + (3, 3))
    out[..., 0, 0] = c
    out[..., 0, 2] = s
    out[..., 1, 1] = 1.0
    out[..., 2, 0] = -s
    out[..., 2, 2] = c
    return out


def six_to_matrix(six: np.ndarray) -> np.ndarray:
    """Orthonormalize a forward/up axis pair back into a rotation matrix."""
    f = six[..., 0:3]
    u = six[..., 3:6]
    z = f / np.linalg.norm(f, axis=-1, keepdims=True)
    x = np.cross(u, z)
    x = x / np.linalg.norm(x, axis=-1, keepdims=True)
    y = np.cross(z, x)
    return np.stack([x, y, z], axis=-1)


def matrix_to_six(mat: np.ndarray) -> np.ndarray:
    """Forward (Z) and up (Y) columns of a rotation matrix."""
    return np.concatenate([mat[..., :, 2], mat[..., :, 1]], axis=-1)


def _smooth_angles(theta: np.ndarray, width: int) -> np.ndarray:
    """Moving average with odd reflection: linear ramps pass through exactly."""
    if width <= 1:
        return theta
    half = width // 2
    padded = np.pad(theta, half, mode="reflect", reflect_type="odd")
    kernel = np.full(width, 1.0 / width)
    return np.convolve(padded, kernel, mode="valid")


def facing_angles(positions: np.ndarray, smooth_width: int = FACING_SMOOTH_WIDTH) -> np.ndarray:
    """Per-frame heading from the hip-lateral vector crossed with vertical."""
    lateral = positions[:, HIP_LEFT] - positions[:, HIP_RIGHT]
    forward = np.cross(lateral, np.array([0.0, 1.0, 0.0]))
    forward[:, 1] = 0.0
    norms = np.linalg.norm(forward, axis=-1)
    if np.any(norms < 1e-10):
        raise ExtractionError("degenerate facing direction: hip vector parallel to vertical")
    theta = np.unwrap(np.arctan2(forward[:, 0], forward[:, 2]))
    return _smooth_angles(theta, smooth_width)


def extract_features(raw: RawMotion, skeleton: Skeleton) -> MotionClip:
    """Convert raw motion into forward-facing-frame pose features."""
    pos, grot = forward_kinematics(skeleton, raw)
    t = raw.n_frames
    theta = facing_angles(pos)
    inv = rot_y(-theta)  # world -> facing frame, per frame

    origin = pos[:, 0].copy()
    origin[:, 1] = 0.0
    local_pos = np.einsum("tab,tjb->tja", inv, pos - origin[:, None, :])
    local_rot = np.einsum("tab,tjbc->tjac", inv, grot)

    vel = np.empty_like(local_pos)
    vel[1:] = local_pos[1:] - local_pos[:-1]
    vel[0] = vel[1]

    droot = np.empty((t, 3))
    dpos = pos[1:, 0] - pos[:-1, 0]
    dplanar = np.einsum("tab,tb->ta", inv[1:], dpos)
    droot[1:, 0] = dplanar[:, 0]
    droot[1:, 1] = dplanar[:, 2]
    droot[1:, 2] = theta[1:] - theta[:-1]
    droot[0] = droot[1]

    feats = np.empty((t, N_JOINTS, DOF))
    feats[:, :, POS] = local_pos
    feats[:, :, ROT] = matrix_to_six(local_rot)
    feats[:, :, VEL] = vel
    feats[:, :, ROOT] = droot[:, None, :]
    return MotionClip(feats, fps=raw.fps)


def integrate_root(clip: MotionClip) -> tuple[np.ndarray, np.ndarray]:
    """Cumulative world root trajectory: planar positions (T, 2) and headings (T,).

    Starts from the origin with zero heading; each frame first turns by the
    angular velocity, then steps by the planar velocity in the new heading.
    """
    track = clip.root_track
    heading = np.cumsum(track[:, 2])
    c, s = np.cos(heading), np.sin(heading)
    # facing-frame (dx, dz) rotated into world by the current heading
    steps_x = c * track[:, 0] + s * track[:, 1]
    steps_z = -s * track[:, 0] + c * track[:, 1]
    positions = np.stack([np.cumsum(steps_x), np.cumsum(steps_z)], axis=-1)
    return positions, heading


def to_world(clip: MotionClip) -> np.ndarray:
    """Global joint positions (T, 21, 3) composing the integrated root path."""
    positions, heading = integrate_root(clip)
    rot = rot_y(heading)
    world = np.einsum("tab,tjb->tja", rot, clip.positions)
    world[:, :, 0] += positions[:, 0:1]
    world[:, :, 2] += positions[:, 1:2]
    return world


def clip_to_raw(clip: MotionClip, skeleton: Skeleton) -> RawMotion:
    """Rebuild world-space raw motion (inverse of extraction, for export)."""
    positions, heading = integrate_root(clip)
    rot = rot_y(heading)
    local_rot = six_to_matrix(
        clip.rotations6.reshape(len(clip), N_JOINTS, 6)
    )
    grot = np.einsum("tab,tjbc->tjac", rot, local_rot)
    root_pos = np.einsum("tab,tb->ta", rot, clip.positions[:, 0])
    root_pos[:, 0] += positions[:, 0]
    root_pos[:, 2] += positions[:, 1]
    parents = skeleton.parents
    rotations = np.empty_like(grot)
    rotations[:, 0] = grot[:, 0]
    for j in range(1, N_JOINTS):
        p = parents[j]
        rotations[:, j] = np.swapaxes(grot[:, p], -1, -2) @ grot[:, j]
    return RawMotion(root_pos, rotations, fps=clip.fps)


def clip_dataset(clip: MotionClip, window: int = 120, overlap: int = 60) -> list[MotionClip]:
    """Slice into fixed windows; a trailing partial window is dropped."""
    step = window - overlap
    if step <= 0:
        raise ValueError("overlap must be smaller than window")
    out = []
    start = 0
    while start + window <= len(clip):
        out.append(MotionClip(clip.features[start : start + window].copy(), fps=clip.fps))
        start += step
    return out


def mirror(clip: MotionClip) -> MotionClip:
    """Swap left/right chains and negate every lateral (X) component."""
    order = [MIRROR_MAP[j] for j in range(N_JOINTS)]
    feats = clip.features[:, order, :].copy()
    for col in (0, 3, 6, 9):  # x of position, forward, up, velocity
        feats[:, :, col] = -feats[:, :, col]
    feats[:, :, 12] = -feats[:, :, 12]  # lateral root velocity
    feats[:, :, 14] = -feats[:, :, 14]  # heading angular velocity
    return MotionClip(feats, fps=clip.fps, skeleton_ref=clip.skeleton_ref)


def _resample(clip: MotionClip, positions: np.ndarray, gamma: float) -> np.ndarray:
    """Sample features at fractional frame positions; velocities divided by gamma."""
    t = len(clip)
    i0 = np.floor(positions).astype(int)
    i1 = np.minimum(i0 + 1, t - 1)
    w = (positions - i0)[:, None, None]
    feats = clip.features
    out = np.empty((len(positions), N_JOINTS, DOF))
    lerp = feats[i0] * (1 - w) + feats[i1] * w
    out[:, :, POS] = lerp[:, :, POS]
    out[:, :, VEL] = lerp[:, :, VEL] / gamma
    out[:, :, ROOT] = lerp[:, :, ROOT] / gamma
    mats = six_to_matrix(feats[:, :, ROT])
    for j in range(N_JOINTS):
        slerp = Slerp(np.arange(t), Rotation.from_matrix(mats[:, j]))
        out[:, j, ROT] = matrix_to_six(slerp(positions).as_matrix())
    return out


def temporal_random_crop(clip: MotionClip, rng: np.random.Generator) -> MotionClip:
    """Random sub-clip, random time rescale, then cut or edge-pad to input length.

    Draw order: sub-clip length, sub-clip start, scale factor. The scale range
    depends on the sub-clip length so that short windows slow down and long
    windows speed up.
    """
    t = len(clip)
    dt = int(rng.integers(t // 2, t + 1))
    start = int(rng.integers(0, t - dt + 1))
    if dt < 3 * t // 4:
        gamma = float(rng.uniform(1.0, 2.0))
    else:
        gamma = float(rng.uniform(0.5, 1.0))
    sub = MotionClip(clip.features[start : start + dt].copy(), fps=clip.fps)
    new_len = max(1, int(round(dt * gamma)))
    positions = np.minimum(np.arange(new_len) / gamma, dt - 1)
    feats = _resample(sub, positions, gamma)
    if len(feats) >= t:
        feats = feats[:t]
    else:
        pad = np.repeat(feats[-1:], t - len(feats), axis=0)
        feats = np.concatenate([feats, pad], axis=0)
    return MotionClip(feats, fps=clip.fps, skeleton_ref=clip.skeleton_ref)


def edge_pad_to_multiple(clip: MotionClip, multiple: int = 4) -> tuple[MotionClip, int]:
    """Replicate the last frame until T divides ``multiple``; returns (clip, original T)."""
    t = len(clip)
    rem = (-t) % multiple
    if rem == 0:
        return clip, t
    pad = np.repeat(clip.features[-1:], rem, axis=0)
    return MotionClip(np.concatenate([clip.features, pad], axis=0), fps=clip.fps), t

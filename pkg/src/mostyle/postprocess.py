"""Foot-sliding cleanup: detect contact phases on the source motion, pin the
output's feet during those phases with analytic two-bone leg IK, and blend
the correction in and out at phase boundaries."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .features import MotionClip, N_JOINTS, POS, ROT, VEL, integrate_root, matrix_to_six, rot_y, six_to_matrix, to_world
from .skeleton import Skeleton, default_skeleton

# leg chains as (hip, knee, ankle, toe); contact is detected on the ankle,
# whose rest height is nonzero, and the toe follows the foot vector
LEG_CHAINS: tuple[tuple[int, int, int, int], ...] = ((1, 2, 3, 4), (5, 6, 7, 8))


@dataclass
class ContactConfig:
    velocity_threshold: float = 0.003  # m/frame (~0.18 m/s at 60 fps)
    height_factor: float = 1.2  # multiple of the ankle's rest height
    blend_frames: int = 5
    chains: tuple[tuple[int, int, int, int], ...] = LEG_CHAINS


def detect_contact_spans(
    world: np.ndarray, joint: int, rest_height: float, cfg: ContactConfig
) -> list[tuple[int, int]]:
    """Inclusive (start, end) frame spans where the joint is slow and low."""
    pos = world[:, joint]
    speed = np.zeros(len(pos))
    speed[1:] = np.linalg.norm(pos[1:] - pos[:-1], axis=-1)
    speed[0] = speed[1] if len(pos) > 1 else 0.0
    contact = (speed < cfg.velocity_threshold) & (pos[:, 1] < cfg.height_factor * rest_height)
    spans = []
    start = None
    for t, on in enumerate(contact):
        if on and start is None:
            start = t
        elif not on and start is not None:
            spans.append((start, t - 1))
            start = None
    if start is not None:
        spans.append((start, len(contact) - 1))
    return spans


def _two_bone_ik(hip: np.ndarray, knee: np.ndarray, ankle: np.ndarray, target: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Place (knee, ankle) so the ankle reaches the target, preserving segment
    lengths and the current bend direction; unreachable targets clamp to full
    extension."""
    l1 = np.linalg.norm(knee - hip)
    l2 = np.linalg.norm(ankle - knee)
    to_target = target - hip
    d = np.linalg.norm(to_target)
    max_reach = l1 + l2
    if d < 1e-9:
        return knee, ankle
    axis = to_target / d
    if d >= max_reach:
        new_ankle = hip + axis * max_reach
        new_knee = hip + axis * l1
        return new_knee, new_ankle
    d = max(d, abs(l1 - l2) + 1e-9)
    new_ankle = hip + axis * d
    q = (d * d + l1 * l1 - l2 * l2) / (2.0 * d)
    h = np.sqrt(max(l1 * l1 - q * q, 0.0))
    bend = (knee - hip) - np.dot(knee - hip, axis) * axis
    norm = np.linalg.norm(bend)
    if norm < 1e-9:
        # degenerate straight leg: bend toward world forward
        bend = np.array([0.0, 0.0, 1.0]) - axis[2] * axis
        norm = np.linalg.norm(bend)
        if norm < 1e-9:
            bend, norm = np.array([1.0, 0.0, 0.0]), 1.0
    new_knee = hip + axis * q + (bend / norm) * h
    return new_knee, new_ankle


def _rotation_between(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Shortest rotation taking direction u to direction v."""
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu < 1e-12 or nv < 1e-12:
        return np.eye(3)
    u = u / nu
    v = v / nv
    c = float(np.clip(np.dot(u, v), -1.0, 1.0))
    axis = np.cross(u, v)
    s = np.linalg.norm(axis)
    if s < 1e-12:
        if c > 0:
            return np.eye(3)
        # opposite directions: rotate half-turn about any perpendicular
        perp = np.cross(u, np.array([1.0, 0.0, 0.0]))
        if np.linalg.norm(perp) < 1e-9:
            perp = np.cross(u, np.array([0.0, 1.0, 0.0]))
        perp /= np.linalg.norm(perp)
        return 2.0 * np.outer(perp, perp) - np.eye(3)
    axis = axis / s
    kmat = np.array(
        [[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]]
    )
    return np.eye(3) + s * kmat + (1 - c) * (kmat @ kmat)


def foot_postprocess(
    source: MotionClip,
    output: MotionClip,
    skeleton: Skeleton | None = None,
    cfg: ContactConfig | None = None,
) -> MotionClip:
    """Pin the output's feet during the source's contact phases.

    The pin target is the average foot position over each contact phase; legs
    are re-posed with two-bone IK, corrections are blended over a few frames
    on either side of the phase, and leg-joint rotations and velocities are
    updated to match the corrected positions.
    """
    skeleton = skeleton or default_skeleton()
    cfg = cfg or ContactConfig()
    if len(source) != len(output):
        raise ValueError("source and output clips must have equal length")
    t_len = len(output)
    rest = skeleton.rest_positions()
    src_world = to_world(source)
    out_world = to_world(output).copy()
    corrected = out_world.copy()

    weight = np.zeros((t_len, len(cfg.chains)))
    for ci, (hip_j, knee_j, ankle_j, toe_j) in enumerate(cfg.chains):
        spans = detect_contact_spans(src_world, ankle_j, rest[ankle_j, 1], cfg)
        for start, end in spans:
            target_ankle = out_world[start : end + 1, ankle_j].mean(axis=0)
            for t in range(start, end + 1):
                foot_vec = out_world[t, toe_j] - out_world[t, ankle_j]
                knee, ankle = _two_bone_ik(
                    out_world[t, hip_j], out_world[t, knee_j], out_world[t, ankle_j], target_ankle
                )
                corrected[t, knee_j] = knee
                corrected[t, ankle_j] = ankle
                corrected[t, toe_j] = ankle + foot_vec
                weight[t, ci] = 1.0
            # linear ramps just outside the span
            for k in range(1, cfg.blend_frames + 1):
                w = 1.0 - k / (cfg.blend_frames + 1)
                for t, edge in ((start - k, start), (end + k, end)):
                    if 0 <= t < t_len and weight[t, ci] == 0.0:
                        delta = corrected[edge] - out_world[edge]
                        corrected[t, knee_j] = out_world[t, knee_j] + w * delta[knee_j]
                        corrected[t, ankle_j] = out_world[t, ankle_j] + w * delta[ankle_j]
                        corrected[t, toe_j] = out_world[t, toe_j] + w * delta[toe_j]
                        weight[t, ci] = w

    feats = output.features.copy()
    positions, heading = integrate_root(output)
    inv = rot_y(-heading)
    moved_joints = sorted({j for chain in cfg.chains for j in chain[1:]})
    hip_joints = {chain[0] for chain in cfg.chains}

    world_delta = corrected - out_world
    if np.abs(world_delta).max() == 0.0:
        return MotionClip(feats, fps=output.fps, skeleton_ref=output.skeleton_ref)

    offset = np.zeros((t_len, 3))
    offset[:, 0] = positions[:, 0]
    offset[:, 2] = positions[:, 1]
    local_corr = np.einsum("tab,tjb->tja", inv, corrected - offset[:, None, :])
    for j in moved_joints:
        feats[:, j, POS] = local_corr[:, j]

    # realign rotations of joints whose child bone direction changed
    rot6 = feats[:, :, ROT]
    mats = six_to_matrix(rot6)
    for chain in cfg.chains:
        for parent_j, child_j in zip(chain[:-1], chain[1:]):
            for t in range(t_len):
                old_dir = out_world[t, child_j] - out_world[t, parent_j]
                new_dir = corrected[t, child_j] - corrected[t, parent_j]
                if np.allclose(old_dir, new_dir):
                    continue
                align_world = _rotation_between(old_dir, new_dir)
                align_local = inv[t] @ align_world @ inv[t].T
                mats[t, parent_j] = align_local @ mats[t, parent_j]
    for j in sorted(hip_joints | set(moved_joints)):
        feats[:, j, ROT] = matrix_to_six(mats[:, j])

    for j in moved_joints:
        vel = np.empty((t_len, 3))
        vel[1:] = feats[1:, j, POS] - feats[:-1, j, POS]
        vel[0] = vel[1] if t_len > 1 else 0.0
        feats[:, j, VEL] = vel

    return MotionClip(feats, fps=output.fps, skeleton_ref=output.skeleton_ref)

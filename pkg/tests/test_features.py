import numpy as np
import pytest

from mostyle.bvh import RawMotion, forward_kinematics
from mostyle.dataset import synthetic_raw
from mostyle.features import (
    MotionClip,
    ROOT,
    clip_dataset,
    clip_to_raw,
    extract_features,
    integrate_root,
    mirror,
    rot_y,
    temporal_random_crop,
    to_world,
)
from mostyle.skeleton import default_skeleton

SKEL = default_skeleton()


def _static_raw(frames=20):
    root = np.zeros((frames, 3))
    root[:, 1] = SKEL.joints[0].offset[1]
    return RawMotion(root, np.tile(np.eye(3), (frames, 21, 1, 1)))


def _walking_raw(frames=50, speed=0.02):
    root = np.zeros((frames, 3))
    root[:, 1] = SKEL.joints[0].offset[1]
    root[:, 2] = speed * np.arange(frames)
    return RawMotion(root, np.tile(np.eye(3), (frames, 21, 1, 1)))


def _turning_raw(frames=40, rate_deg=1.0):
    rate = np.deg2rad(rate_deg)
    theta = rate * np.arange(frames)
    root = np.zeros((frames, 3))
    root[:, 1] = SKEL.joints[0].offset[1]
    rotations = np.tile(np.eye(3), (frames, 21, 1, 1))
    rotations[:, 0] = rot_y(theta)
    return RawMotion(root, rotations)


def test_static_clip_has_zero_velocities():
    clip = extract_features(_static_raw(), SKEL)
    assert np.abs(clip.velocities).max() < 1e-12
    assert np.abs(clip.root_track).max() < 1e-12


def test_forward_translation_maps_to_root_z():
    clip = extract_features(_walking_raw(speed=0.02), SKEL)
    track = clip.root_track
    np.testing.assert_allclose(track[:, 1], 0.02, atol=1e-9)
    np.testing.assert_allclose(track[:, 0], 0.0, atol=1e-9)
    assert np.abs(clip.velocities).max() < 1e-9  # rigid translation: local pose constant


def test_constant_turn_rate_recovered_every_frame():
    clip = extract_features(_turning_raw(rate_deg=1.0), SKEL)
    np.testing.assert_allclose(clip.root_track[:, 2], np.pi / 180, atol=1e-6)


def test_degenerate_hips_raise():
    raw = _static_raw()
    collapse = np.zeros((3, 3))  # squashes hip offsets onto the root
    raw.rotations[:, 0] = collapse
    with pytest.raises(Exception):
        extract_features(raw, SKEL)


# -- root trajectory integration --------------------------------------------


def _clip_with_root(track, frames):
    feats = np.zeros((frames, 21, 15))
    feats[:, :, 12:15] = track[:, None, :]
    return MotionClip(feats)


def test_integrate_zero_track_stays_at_origin():
    clip = _clip_with_root(np.zeros((30, 3)), 30)
    positions, heading = integrate_root(clip)
    assert np.abs(positions).max() == 0.0
    assert np.abs(heading).max() == 0.0


def test_integrate_straight_line_closed_form():
    track = np.zeros((100, 3))
    track[:, 1] = 0.02
    positions, _ = integrate_root(_clip_with_root(track, 100))
    np.testing.assert_allclose(positions[-1], [0.0, 2.0], atol=1e-9)


def test_integrate_constant_turn_closes_circle():
    frames = 120
    track = np.zeros((frames, 3))
    track[:, 1] = 0.015
    track[:, 2] = 2 * np.pi / frames
    positions, _ = integrate_root(_clip_with_root(track, frames))
    assert np.linalg.norm(positions[-1]) < 1e-6  # sum of equally spaced steps vanishes


def _kabsch_2d(a, b):
    """Optimal rigid alignment of point sets; returns aligned a."""
    ca, cb = a.mean(axis=0), b.mean(axis=0)
    h = (a - ca).T @ (b - cb)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    r = vt.T @ np.diag([1, d]) @ u.T
    return (a - ca) @ r.T + cb


def test_extract_then_integrate_matches_raw_trajectory():
    rate = np.deg2rad(0.8)
    frames = 90
    speed = 0.02
    theta = rate * np.arange(frames)
    root = np.zeros((frames, 3))
    root[:, 1] = SKEL.joints[0].offset[1]
    step = np.stack([np.sin(theta), np.zeros(frames), np.cos(theta)], axis=-1) * speed
    root += np.cumsum(step, axis=0)
    rotations = np.tile(np.eye(3), (frames, 21, 1, 1))
    rotations[:, 0] = rot_y(theta)
    raw = RawMotion(root, rotations)

    clip = extract_features(raw, SKEL)
    positions, _ = integrate_root(clip)
    aligned = _kabsch_2d(positions, root[:, [0, 2]])
    assert np.abs(aligned - root[:, [0, 2]]).max() < 1e-6


# -- world reconstruction -----------------------------------------------------


def test_world_positions_of_static_clip_equal_local():
    clip = extract_features(_static_raw(), SKEL)
    world = to_world(clip)
    np.testing.assert_allclose(world, clip.positions, atol=1e-12)


def test_world_positions_shift_by_integrated_root():
    clip = extract_features(_walking_raw(speed=0.02), SKEL)
    world = to_world(clip)
    positions, _ = integrate_root(clip)
    shifted = clip.positions.copy()
    shifted[:, :, 2] += positions[:, 1:2]
    np.testing.assert_allclose(world, shifted, atol=1e-9)


def test_world_round_trip_against_forward_kinematics():
    frames = 60
    rng = np.random.default_rng(11)
    raw = synthetic_raw(rng, frames=frames, skeleton=SKEL)
    # straight version: strip the turn so the initial facing is exactly +Z
    raw.rotations[:, 0] = np.eye(3)
    root = raw.root_positions.copy()
    root[:, 0] = 0.0
    root[:, 2] = 0.02 * np.arange(frames)
    raw = RawMotion(root, raw.rotations)

    fk_pos, _ = forward_kinematics(SKEL, raw)
    clip = extract_features(raw, SKEL)
    world = to_world(clip)
    # the integrated path cannot recover absolute placement (features are
    # placement-invariant); align the frame-0 root and compare shapes
    shift = (fk_pos[0, 0] - world[0, 0]) * np.array([1.0, 0.0, 1.0])
    assert np.abs(world + shift - fk_pos).max() < 1e-5


def test_clip_to_raw_inverts_extraction():
    raw = synthetic_raw(np.random.default_rng(5), frames=40, skeleton=SKEL)
    clip = extract_features(raw, SKEL)
    rebuilt = clip_to_raw(clip, SKEL)
    pos_a, _ = forward_kinematics(SKEL, raw)
    pos_b, _ = forward_kinematics(SKEL, rebuilt)
    # same shape up to the planar rigid placement; compare recentered frames
    a = pos_a - pos_a[:, :1, :]
    b = pos_b - pos_b[:, :1, :]
    rel = rot_y(np.zeros(1))  # placeholder; compare bone geometry directly
    assert np.abs(np.linalg.norm(a, axis=-1) - np.linalg.norm(b, axis=-1)).max() < 1e-6


# -- windowing ----------------------------------------------------------------


def test_window_slicing_arithmetic():
    clip = MotionClip(np.zeros((300, 21, 15)))
    windows = clip_dataset(clip)
    assert len(windows) == 4
    clip2 = MotionClip(np.arange(300 * 21 * 15, dtype=float).reshape(300, 21, 15))
    windows2 = clip_dataset(clip2)
    for i, start in enumerate((0, 60, 120, 180)):
        np.testing.assert_array_equal(windows2[i].features, clip2.features[start : start + 120])


def test_window_exact_fit_and_short_input():
    assert len(clip_dataset(MotionClip(np.zeros((120, 21, 15))))) == 1
    assert clip_dataset(MotionClip(np.zeros((119, 21, 15)))) == []


# -- mirroring ----------------------------------------------------------------


def test_mirror_is_involution():
    clip = extract_features(synthetic_raw(np.random.default_rng(2), frames=30), SKEL)
    twice = mirror(mirror(clip))
    assert np.abs(twice.features - clip.features).max() < 1e-9


def test_mirror_flips_lateral_root_velocity():
    feats = np.zeros((10, 21, 15))
    feats[:, :, 12] = 0.01  # stepping left
    flipped = mirror(MotionClip(feats))
    np.testing.assert_allclose(flipped.features[:, :, 12], -0.01)


def test_mirror_fixed_point_on_symmetric_pose():
    clip = extract_features(_static_raw(), SKEL)  # T-pose is bilaterally symmetric
    mirrored = mirror(clip)
    assert np.abs(mirrored.features - clip.features).max() < 1e-9


def _rotation_pairs_orthonormal(clip, tol=1e-4):
    six = clip.features[:, :, 3:9]
    f, u = six[..., 0:3], six[..., 3:6]
    assert np.abs(np.linalg.norm(f, axis=-1) - 1).max() < tol
    assert np.abs(np.linalg.norm(u, axis=-1) - 1).max() < tol
    assert np.abs((f * u).sum(axis=-1)).max() < tol


def test_mirror_preserves_rotation_orthonormality():
    clip = extract_features(synthetic_raw(np.random.default_rng(4), frames=30), SKEL)
    _rotation_pairs_orthonormal(mirror(clip))


# -- temporal random cropping -------------------------------------------------


class ScriptedRng:
    """Fixed integer draws; uniform() records the requested range."""

    def __init__(self, ints):
        self.ints = list(ints)
        self.uniform_ranges = []

    def integers(self, lo, hi):
        return self.ints.pop(0)

    def uniform(self, lo, hi):
        self.uniform_ranges.append((lo, hi))
        return (lo + hi) / 2

    def random(self):
        return 0.0


def _clip120(seed=0):
    return extract_features(synthetic_raw(np.random.default_rng(seed), frames=120), SKEL)


def test_crop_output_length_always_120():
    clip = _clip120()
    for seed in range(1000):
        out = temporal_random_crop(clip, np.random.default_rng(seed))
        assert len(out) == 120


def test_crop_scale_range_depends_on_subclip_length():
    clip = _clip120()
    rng = ScriptedRng([90, 0])  # dt = 3T/4 exactly, start 0
    temporal_random_crop(clip, rng)
    assert rng.uniform_ranges == [(0.5, 1.0)]
    rng = ScriptedRng([89, 0])  # below the 3T/4 boundary
    temporal_random_crop(clip, rng)
    assert rng.uniform_ranges == [(1.0, 2.0)]


def test_crop_identity_when_full_window_unit_scale():
    clip = _clip120()

    class IdentityRng(ScriptedRng):
        def uniform(self, lo, hi):
            return 1.0

    out = temporal_random_crop(clip, IdentityRng([120, 0]))
    np.testing.assert_allclose(out.features, clip.features, atol=1e-9)


def test_crop_preserves_rotation_orthonormality():
    clip = _clip120(3)
    for seed in range(20):
        _rotation_pairs_orthonormal(temporal_random_crop(clip, np.random.default_rng(seed)))


def test_crop_divides_velocities_by_scale():
    feats = np.zeros((120, 21, 15))
    feats[:, :, 3] = 0.0
    feats[:, :, 3:9] = [0, 0, 1, 0, 1, 0]  # identity rotation pair
    feats[:, :, 13] = 0.02  # constant forward speed

    class HalfSpeed(ScriptedRng):
        def uniform(self, lo, hi):
            return 2.0

    out = temporal_random_crop(MotionClip(feats), HalfSpeed([60, 0]))
    np.testing.assert_allclose(out.features[:, :, 13], 0.01, atol=1e-12)


# -- rigid invariance ---------------------------------------------------------


def test_features_invariant_to_planar_rigid_transform():
    raw = synthetic_raw(np.random.default_rng(9), frames=48, skeleton=SKEL)
    clip = extract_features(raw, SKEL)

    angle = 0.83
    rot = rot_y(angle)
    offset = np.array([2.5, 0.0, -1.0])
    moved_root = raw.root_positions @ rot.T + offset
    moved_rotations = raw.rotations.copy()
    moved_rotations[:, 0] = rot @ moved_rotations[:, 0]
    moved = RawMotion(moved_root, moved_rotations)
    clip_moved = extract_features(moved, SKEL)
    assert np.abs(clip.features - clip_moved.features).max() < 1e-6

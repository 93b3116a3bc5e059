"""The fixed 21-joint skeleton and its five-way body-part partition."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PARTS = ("LL", "RL", "SP", "LA", "RA")

# joint index -> body part; spine owns the root
PART_LABELS: dict[int, str] = {
    **{j: "LL" for j in (1, 2, 3, 4)},
    **{j: "RL" for j in (5, 6, 7, 8)},
    **{j: "SP" for j in (0, 9, 10, 11, 12)},
    **{j: "LA" for j in (13, 14, 15, 16)},
    **{j: "RA" for j in (17, 18, 19, 20)},
}

# left/right twins for mirroring
MIRROR_MAP: dict[int, int] = {
    0: 0, 9: 9, 10: 10, 11: 11, 12: 12,
    1: 5, 2: 6, 3: 7, 4: 8,
    5: 1, 6: 2, 7: 3, 8: 4,
    13: 17, 14: 18, 15: 19, 16: 20,
    17: 13, 18: 14, 19: 15, 20: 16,
}


@dataclass(frozen=True)
class Joint:
    name: str
    parent: int
    offset: tuple[float, float, float]  # rest offset from parent, meters


@dataclass(frozen=True)
class Skeleton:
    joints: tuple[Joint, ...]
    part_labels: dict[int, str] = field(default_factory=lambda: dict(PART_LABELS))

    def __post_init__(self):
        if len(self.joints) != 21:
            raise ValueError(f"skeleton must have 21 joints, got {len(self.joints)}")
        if self.joints[0].parent != -1:
            raise ValueError("joint 0 must be the root (parent -1)")
        for j, joint in enumerate(self.joints[1:], start=1):
            if not (0 <= joint.parent < j):
                raise ValueError(f"joint {j} parent {joint.parent} must precede it")

    @property
    def parents(self) -> list[int]:
        return [j.parent for j in self.joints]

    @property
    def offsets(self) -> np.ndarray:
        return np.array([j.offset for j in self.joints], dtype=np.float64)

    @property
    def names(self) -> list[str]:
        return [j.name for j in self.joints]

    def rest_positions(self) -> np.ndarray:
        """Global joint positions in the rest pose (identity rotations)."""
        pos = np.zeros((21, 3))
        off = self.offsets
        for j, parent in enumerate(self.parents):
            pos[j] = off[j] if parent < 0 else pos[parent] + off[j]
        return pos

    @property
    def height(self) -> float:
        """Rest height: vertical span from the lowest foot joint to the head."""
        pos = self.rest_positions()
        return float(pos[:, 1].max() - pos[:, 1].min())

    def children(self, j: int) -> list[int]:
        return [c for c, p in enumerate(self.parents) if p == j]

    def edges(self) -> list[tuple[int, int]]:
        return [(j.parent, c) for c, j in enumerate(self.joints) if j.parent >= 0]


# Canonical joint layout. Chains run root -> extremity with contiguous indices
# per limb so that part membership matches PART_LABELS.
_DEFAULT_JOINTS = (
    Joint("Hips", -1, (0.0, 0.98, 0.0)),
    Joint("LeftUpLeg", 0, (0.10, -0.05, 0.0)),
    Joint("LeftLeg", 1, (0.0, -0.43, 0.0)),
    Joint("LeftFoot", 2, (0.0, -0.43, 0.0)),
    Joint("LeftToe", 3, (0.0, -0.07, 0.13)),
    Joint("RightUpLeg", 0, (-0.10, -0.05, 0.0)),
    Joint("RightLeg", 5, (0.0, -0.43, 0.0)),
    Joint("RightFoot", 6, (0.0, -0.43, 0.0)),
    Joint("RightToe", 7, (0.0, -0.07, 0.13)),
    Joint("Spine", 0, (0.0, 0.12, 0.0)),
    Joint("Spine1", 9, (0.0, 0.14, 0.0)),
    Joint("Neck", 10, (0.0, 0.16, 0.0)),
    Joint("Head", 11, (0.0, 0.13, 0.0)),
    Joint("LeftShoulder", 10, (0.10, 0.10, 0.0)),
    Joint("LeftArm", 13, (0.12, 0.0, 0.0)),
    Joint("LeftForeArm", 14, (0.26, 0.0, 0.0)),
    Joint("LeftHand", 15, (0.25, 0.0, 0.0)),
    Joint("RightShoulder", 10, (-0.10, 0.10, 0.0)),
    Joint("RightArm", 17, (-0.12, 0.0, 0.0)),
    Joint("RightForeArm", 18, (-0.26, 0.0, 0.0)),
    Joint("RightHand", 19, (-0.25, 0.0, 0.0)),
)


def default_skeleton() -> Skeleton:
    return Skeleton(_DEFAULT_JOINTS)


def default_joint_map() -> dict[str, int]:
    """Name -> canonical index mapping used to retarget parsed files."""
    return {j.name: i for i, j in enumerate(_DEFAULT_JOINTS)}

"""BVH parsing and writing for the fixed 21-joint skeleton.

Supports ZXY / XYZ / ZYX rotation channel orders and 3- or 6-channel joints.
End Sites are dropped. Parsed hierarchies are retargeted onto the canonical
joint order through a name map; no automatic retargeting between topologies.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from .skeleton import Joint, Skeleton, default_joint_map

_SUPPORTED_ORDERS = {"ZXY", "XYZ", "ZYX"}


class BvhParseError(ValueError):
    """Malformed BVH grammar; message carries the offending line number."""


class RetargetError(ValueError):
    """Parsed hierarchy does not map onto the canonical 21-joint skeleton."""


@dataclass
class BvhJoint:
    name: str
    parent: int
    offset: np.ndarray
    channels: list[str]


@dataclass
class BvhDocument:
    joints: list[BvhJoint]
    frames: np.ndarray  # (T, total channels)
    frame_time: float

    @property
    def fps(self) -> int:
        return int(round(1.0 / self.frame_time))


@dataclass
class RawMotion:
    """Per-frame global root translation and per-joint local rotations."""

    root_positions: np.ndarray  # (T, 3) meters
    rotations: np.ndarray  # (T, n_joints, 3, 3); joint 0 holds its world orientation
    fps: int = 60

    def __post_init__(self):
        if len(self.root_positions) < 2:
            raise ValueError("raw motion needs at least 2 frames (velocities need a predecessor)")

    @property
    def n_frames(self) -> int:
        return len(self.root_positions)


def forward_kinematics(skeleton: Skeleton, raw: RawMotion) -> tuple[np.ndarray, np.ndarray]:
    """Global joint positions (T, 21, 3) and rotations (T, 21, 3, 3)."""
    offsets = skeleton.offsets
    parents = skeleton.parents
    t = raw.n_frames
    pos = np.zeros((t, 21, 3))
    rot = np.zeros((t, 21, 3, 3))
    pos[:, 0] = raw.root_positions
    rot[:, 0] = raw.rotations[:, 0]
    for j in range(1, 21):
        p = parents[j]
        rot[:, j] = rot[:, p] @ raw.rotations[:, j]
        pos[:, j] = pos[:, p] + np.einsum("tab,b->ta", rot[:, p], offsets[j])
    return pos, rot


class _Tokens:
    def __init__(self, text: str):
        self.items: list[tuple[str, int]] = []
        for ln, line in enumerate(text.splitlines(), start=1):
            for tok in line.split():
                self.items.append((tok, ln))
        self.pos = 0

    def peek(self) -> str | None:
        return self.items[self.pos][0] if self.pos < len(self.items) else None

    def next(self, expect: str | None = None) -> str:
        if self.pos >= len(self.items):
            raise BvhParseError("unexpected end of file")
        tok, ln = self.items[self.pos]
        self.pos += 1
        if expect is not None and tok.upper() != expect.upper():
            raise BvhParseError(f"line {ln}: expected {expect!r}, got {tok!r}")
        return tok

    def next_float(self) -> float:
        if self.pos >= len(self.items):
            raise BvhParseError("unexpected end of file")
        tok, ln = self.items[self.pos]
        self.pos += 1
        try:
            return float(tok)
        except ValueError:
            raise BvhParseError(f"line {ln}: expected number, got {tok!r}") from None

    @property
    def line(self) -> int:
        idx = min(self.pos, len(self.items) - 1)
        return self.items[idx][1]


def parse_bvh_document(text: str) -> BvhDocument:
    """Parse hierarchy and motion sections into a generic document."""
    toks = _Tokens(text)
    toks.next("HIERARCHY")
    joints: list[BvhJoint] = []

    def parse_joint(parent: int) -> None:
        kw = toks.next()
        if kw.upper() not in ("ROOT", "JOINT"):
            raise BvhParseError(f"line {toks.line}: expected ROOT or JOINT, got {kw!r}")
        name = toks.next()
        toks.next("{")
        toks.next("OFFSET")
        offset = np.array([toks.next_float() for _ in range(3)])
        toks.next("CHANNELS")
        n = int(toks.next_float())
        if n not in (3, 6):
            raise BvhParseError(f"line {toks.line}: only 3- or 6-channel joints supported, got {n}")
        channels = [toks.next() for _ in range(n)]
        order = "".join(c[0].upper() for c in channels if c.lower().endswith("rotation"))
        if order not in _SUPPORTED_ORDERS:
            raise BvhParseError(f"line {toks.line}: unsupported rotation order {order!r}")
        me = len(joints)
        joints.append(BvhJoint(name, parent, offset, channels))
        while True:
            nxt = toks.peek()
            if nxt is None:
                raise BvhParseError("unexpected end of file in hierarchy")
            if nxt == "}":
                toks.next()
                return
            if nxt.upper() == "END":
                toks.next()
                toks.next()  # "Site"
                toks.next("{")
                toks.next("OFFSET")
                for _ in range(3):
                    toks.next_float()
                toks.next("}")
            else:
                parse_joint(me)

    parse_joint(-1)
    toks.next("MOTION")
    tok = toks.next()
    if tok.rstrip(":").upper() != "FRAMES":
        raise BvhParseError(f"line {toks.line}: expected 'Frames:', got {tok!r}")
    if tok == "Frames":  # 'Frames :' split across tokens
        toks.next(":")
    n_frames = int(toks.next_float())
    if n_frames < 2:
        raise BvhParseError(f"line {toks.line}: need at least 2 frames, got {n_frames}")
    toks.next("Frame")
    tok = toks.next()
    if tok.rstrip(":").upper() != "TIME":
        raise BvhParseError(f"line {toks.line}: expected 'Time:', got {tok!r}")
    if tok == "Time":
        toks.next(":")
    frame_time = toks.next_float()
    if frame_time <= 0:
        raise BvhParseError(f"line {toks.line}: frame time must be positive")
    n_channels = sum(len(j.channels) for j in joints)
    values = np.empty((n_frames, n_channels))
    for f in range(n_frames):
        for c in range(n_channels):
            values[f, c] = toks.next_float()
    return BvhDocument(joints, values, frame_time)


def document_to_canonical(
    doc: BvhDocument,
    scale: float = 1.0,
    joint_map: dict[str, int] | None = None,
) -> tuple[Skeleton, RawMotion]:
    """Retarget a parsed document onto the canonical joint ordering."""
    if joint_map is None:
        joint_map = default_joint_map()
    mapped = [j for j in doc.joints if j.name in joint_map]
    if len(mapped) != 21 or len({joint_map[j.name] for j in mapped}) != 21:
        raise RetargetError(
            f"joint map covers {len(mapped)} of the parsed joints; exactly 21 required"
        )
    bvh_index = {j.name: i for i, j in enumerate(doc.joints)}
    order = sorted(mapped, key=lambda j: joint_map[j.name])

    canon_joints = []
    for j in order:
        # walk up through unmapped intermediate joints, accumulating offsets
        parent = j.parent
        offset = j.offset.copy()
        while parent >= 0 and doc.joints[parent].name not in joint_map:
            offset = offset + doc.joints[parent].offset
            parent = doc.joints[parent].parent
        canon_parent = -1 if parent < 0 else joint_map[doc.joints[parent].name]
        canon_joints.append(Joint(j.name, canon_parent, tuple(offset * scale)))
    skeleton = Skeleton(tuple(canon_joints))

    # channel layout offsets per parsed joint
    starts = np.cumsum([0] + [len(j.channels) for j in doc.joints])
    t = len(doc.frames)
    rotations = np.tile(np.eye(3), (t, 21, 1, 1))
    root_pos = np.zeros((t, 3))
    for j in order:
        ci = starts[bvh_index[j.name]]
        chans = j.channels
        rot_idx = [i for i, c in enumerate(chans) if c.lower().endswith("rotation")]
        order_str = "".join(chans[i][0].upper() for i in rot_idx)
        angles = doc.frames[:, [ci + i for i in rot_idx]]
        mats = Rotation.from_euler(order_str, angles, degrees=True).as_matrix()
        # intermediate unmapped rotations are folded into the child
        parent = j.parent
        while parent >= 0 and doc.joints[parent].name not in joint_map:
            pj = doc.joints[parent]
            pci = starts[parent]
            p_rot_idx = [i for i, c in enumerate(pj.channels) if c.lower().endswith("rotation")]
            p_order = "".join(pj.channels[i][0].upper() for i in p_rot_idx)
            p_angles = doc.frames[:, [pci + i for i in p_rot_idx]]
            mats = Rotation.from_euler(p_order, p_angles, degrees=True).as_matrix() @ mats
            parent = pj.parent
        canon_j = joint_map[j.name]
        rotations[:, canon_j] = mats
        if canon_j == 0:
            pos_idx = [i for i, c in enumerate(chans) if c.lower().endswith("position")]
            if len(pos_idx) == 3:
                cols = {chans[i][0].upper(): ci + i for i in pos_idx}
                root_pos = doc.frames[:, [cols["X"], cols["Y"], cols["Z"]]] * scale
    return skeleton, RawMotion(root_pos, rotations, fps=doc.fps)


def parse_bvh(
    text: str, scale: float = 1.0, joint_map: dict[str, int] | None = None
) -> tuple[Skeleton, RawMotion]:
    """Parse a BVH document and retarget it to the canonical skeleton."""
    return document_to_canonical(parse_bvh_document(text), scale=scale, joint_map=joint_map)


def write_bvh(skeleton: Skeleton, raw: RawMotion, scale: float = 1.0) -> str:
    """Serialize motion as BVH with ZXY rotation channels, 6-channel root."""
    children: dict[int, list[int]] = {j: [] for j in range(-1, 21)}
    for j, p in enumerate(skeleton.parents):
        children[p].append(j)
    lines = ["HIERARCHY"]
    dfs_order: list[int] = []

    def emit(j: int, depth: int) -> None:
        dfs_order.append(j)
        pad = "  " * depth
        kw = "ROOT" if j == 0 else "JOINT"
        lines.append(f"{pad}{kw} {skeleton.joints[j].name}")
        lines.append(pad + "{")
        ox, oy, oz = (np.asarray(skeleton.joints[j].offset) * scale).tolist()
        lines.append(f"{pad}  OFFSET {ox:.6f} {oy:.6f} {oz:.6f}")
        if j == 0:
            lines.append(
                f"{pad}  CHANNELS 6 Xposition Yposition Zposition Zrotation Xrotation Yrotation"
            )
        else:
            lines.append(f"{pad}  CHANNELS 3 Zrotation Xrotation Yrotation")
        kids = children[j]
        if kids:
            for c in kids:
                emit(c, depth + 1)
        else:
            lines.append(f"{pad}  End Site")
            lines.append(pad + "  {")
            lines.append(f"{pad}    OFFSET 0.000000 0.000000 0.000000")
            lines.append(pad + "  }")
        lines.append(pad + "}")

    emit(0, 0)
    t = raw.n_frames
    lines.append("MOTION")
    lines.append(f"Frames: {t}")
    lines.append(f"Frame Time: {1.0 / raw.fps:.8f}")
    for f in range(t):
        row: list[str] = []
        px, py, pz = (raw.root_positions[f] * scale).tolist()
        row += [f"{px:.6f}", f"{py:.6f}", f"{pz:.6f}"]
        for j in dfs_order:
            z, x, y = Rotation.from_matrix(raw.rotations[f, j]).as_euler("ZXY", degrees=True)
            row += [f"{z:.6f}", f"{x:.6f}", f"{y:.6f}"]
        lines.append(" ".join(row))
    return "\n".join(lines) + "\n"

"""Three-level body-part-preserving skeletal graphs and their layers.

Level 1 is the 21-joint skeleton, level 2 pools chain pairs to 10 vertices,
level 3 pools each body part to a single vertex. Pooling halves the frame
count (average over frame pairs); unpooling is nearest-neighbor in time and a
copy across the group in space. Spatial convolution aggregates neighbors by
edge distance with per-distance weights, normalized by the class size.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .skeleton import PARTS, Skeleton

# level-1 -> level-2 groups, in level-2 vertex order (pairs along each chain)
POOL_GROUPS_1TO2: tuple[tuple[int, ...], ...] = (
    (1, 2), (3, 4),        # LL
    (5, 6), (7, 8),        # RL
    (0, 9, 10), (11, 12),  # SP
    (13, 14), (15, 16),    # LA
    (17, 18), (19, 20),    # RA
)
POOL_GROUPS_2TO3: tuple[tuple[int, ...], ...] = ((0, 1), (2, 3), (4, 5), (6, 7), (8, 9))

PART_ORDER_G2 = ("LL", "LL", "RL", "RL", "SP", "SP", "LA", "LA", "RA", "RA")
PART_ORDER_G3 = PARTS


class GraphConstructionError(ValueError):
    pass


def _bfs_distances(n: int, edges: list[tuple[int, int]]) -> np.ndarray:
    adj: list[list[int]] = [[] for _ in range(n)]
    for a, b in edges:
        adj[a].append(b)
        adj[b].append(a)
    dist = np.full((n, n), -1, dtype=int)
    for s in range(n):
        dist[s, s] = 0
        queue = [s]
        while queue:
            nxt = []
            for v in queue:
                for w in adj[v]:
                    if dist[s, w] < 0:
                        dist[s, w] = dist[s, v] + 1
                        nxt.append(w)
            queue = nxt
    return dist


@dataclass(frozen=True)
class GraphLevel:
    level: int
    n_vertices: int
    edges: tuple[tuple[int, int], ...]
    part_labels: tuple[str, ...]
    K: int
    pool_groups: tuple[tuple[int, ...], ...] | None = None  # coarse vertex -> fine members

    @cached_property
    def distances(self) -> np.ndarray:
        return _bfs_distances(self.n_vertices, list(self.edges))

    @cached_property
    def part_vertices(self) -> dict[str, list[int]]:
        return {p: [v for v, lbl in enumerate(self.part_labels) if lbl == p] for p in PARTS}

    @cached_property
    def neighbor_means(self) -> np.ndarray:
        """(K+1, V, V) row-normalized distance-class averaging matrices."""
        d = self.distances
        mats = np.zeros((self.K + 1, self.n_vertices, self.n_vertices))
        for k in range(self.K + 1):
            mask = (d == k).astype(float)
            counts = mask.sum(axis=1, keepdims=True)
            np.divide(mask, counts, out=mats[k], where=counts > 0)
        return mats

    @cached_property
    def neighbor_means_interleaved(self) -> np.ndarray:
        """((K+1)*V, V) matrix with rows ordered vertex-major, distance-minor,
        so a gather followed by a reshape yields per-vertex stacked channels."""
        mats = self.neighbor_means
        kd = self.K + 1
        out = np.zeros((kd * self.n_vertices, self.n_vertices))
        for v in range(self.n_vertices):
            for k in range(kd):
                out[v * kd + k] = mats[k, v]
        return out


def build_graph_levels(
    skeleton: Skeleton, k_values: tuple[int, int, int] = (2, 1, 1)
) -> tuple[GraphLevel, GraphLevel, GraphLevel]:
    """Construct the 21/10/5-vertex graph hierarchy from the skeleton tree."""
    if len(skeleton.joints) != 21:
        raise GraphConstructionError(f"expected 21 joints, got {len(skeleton.joints)}")
    labels1 = tuple(skeleton.part_labels[j] for j in range(21))
    g1 = GraphLevel(
        level=1,
        n_vertices=21,
        edges=tuple(skeleton.edges()),
        part_labels=labels1,
        K=k_values[0],
        pool_groups=POOL_GROUPS_1TO2,
    )
    for grp in POOL_GROUPS_1TO2:
        if len({labels1[v] for v in grp}) != 1:
            raise GraphConstructionError(f"pool group {grp} mixes body parts")

    def coarsen(edges, groups):
        owner = {}
        for c, grp in enumerate(groups):
            for v in grp:
                owner[v] = c
        coarse = set()
        for a, b in edges:
            ca, cb = owner[a], owner[b]
            if ca != cb:
                coarse.add((min(ca, cb), max(ca, cb)))
        return tuple(sorted(coarse))

    g2 = GraphLevel(
        level=2,
        n_vertices=10,
        edges=coarsen(g1.edges, POOL_GROUPS_1TO2),
        part_labels=PART_ORDER_G2,
        K=k_values[1],
        pool_groups=POOL_GROUPS_2TO3,
    )
    g3 = GraphLevel(
        level=3,
        n_vertices=5,
        edges=coarsen(g2.edges, POOL_GROUPS_2TO3),
        part_labels=PART_ORDER_G3,
        K=k_values[2],
        pool_groups=None,
    )
    return g1, g2, g3


def describe_graph_levels(levels: tuple[GraphLevel, ...]) -> str:
    """Plain-text dump of vertices, edges and pool groups (for inspection)."""
    lines = []
    for g in levels:
        lines.append(f"level {g.level}: {g.n_vertices} vertices, K={g.K}")
        lines.append("  vertices: " + " ".join(f"{v}:{lbl}" for v, lbl in enumerate(g.part_labels)))
        lines.append("  edges: " + " ".join(f"{a}-{b}" for a, b in g.edges))
        if g.pool_groups is not None:
            groups = " ".join("{" + ",".join(map(str, grp)) + "}" for grp in g.pool_groups)
            lines.append("  pool groups: " + groups)
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# layers


def stgcn_spatial(x: Tensor, level: GraphLevel, weights: list[Tensor], bias: Tensor) -> Tensor:
    """Per-frame graph convolution: distance-class means times per-distance weights."""
    if len(weights) != level.K + 1:
        raise ad.DimensionError(
            f"stgcn_spatial: expected {level.K + 1} weight matrices, got {len(weights)}"
        )
    out = None
    for k, w in enumerate(weights):
        gathered = ad.gather_weighted_sum(x, level.neighbor_means[k], axis=-2)
        term = ad.linear(gathered, w)
        out = term if out is None else ad.add(out, term)
    return ad.add(out, bias)


def stgcn_layer(x: Tensor, level: GraphLevel, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Fused spatial-temporal convolution.

    w has shape (K+1, k_t, C_in, C_out). Distance-class gathers are stacked on
    the channel axis, then a single temporal convolution applies the whole
    kernel; with k_t = 1 this reduces exactly to the spatial convolution.
    """
    kd, kt, c_in, c_out = w.shape
    if kd != level.K + 1:
        raise ad.DimensionError(f"stgcn_layer: kernel has {kd} distance classes, level needs {level.K + 1}")
    if x.shape[-1] != c_in:
        raise ad.DimensionError(f"stgcn_layer: input channels {x.shape[-1]} != kernel {c_in}")
    stacked = ad.gather_weighted_sum(x, level.neighbor_means_interleaved, axis=-2)
    gathered = ad.reshape(stacked, x.shape[:-2] + (x.shape[-2], kd * c_in))
    # (K+1, k_t, C_in, C_out) -> (k_t, (K+1)*C_in, C_out) matching the gather stacking
    wt = ad.reshape(_transpose01(w), (kt, kd * c_in, c_out))
    return ad.temporal_conv1d(gathered, wt, b)


def _transpose01(w: Tensor) -> Tensor:
    """Swap the first two axes of a 4D tensor (kernel layout shuffle)."""
    kd, kt, c_in, c_out = w.shape
    rows = [ad.take(w, [j], axis=1) for j in range(kt)]
    stacked = ad.concat_axis(rows, axis=0)  # (kt*kd, 1, C_in, C_out)
    return ad.reshape(stacked, (kt, kd, c_in, c_out))


def _temporal_halve_matrix(t: int) -> np.ndarray:
    """Average-pool pairs of frames; an odd final frame pairs with itself."""
    t_out = (t + 1) // 2
    m = np.zeros((t_out, t))
    for i in range(t_out):
        a, b = 2 * i, min(2 * i + 1, t - 1)
        if a == b:
            m[i, a] = 1.0
        else:
            m[i, a] = m[i, b] = 0.5
    return m


def _temporal_double_matrix(t: int) -> np.ndarray:
    m = np.zeros((2 * t, t))
    for i in range(2 * t):
        m[i, i // 2] = 1.0
    return m


def part_pool(x: Tensor, fine: GraphLevel) -> Tensor:
    """Spatial group average + temporal pair average (halves the frame count)."""
    if fine.pool_groups is None:
        raise ad.ContractError(f"level {fine.level} has no pool groups")
    pooled = ad.avg_pool_groups(x, fine.pool_groups, axis=-2)
    return ad.gather_weighted_sum(pooled, _temporal_halve_matrix(x.shape[-3]), axis=-3)


def part_unpool(x: Tensor, fine: GraphLevel) -> Tensor:
    """Broadcast each coarse vertex back over its group; nearest x2 in time."""
    if fine.pool_groups is None:
        raise ad.ContractError(f"level {fine.level} has no pool groups")
    up = ad.broadcast_unpool(x, fine.pool_groups, fine.n_vertices, axis=-2)
    return ad.gather_weighted_sum(up, _temporal_double_matrix(x.shape[-3]), axis=-3)

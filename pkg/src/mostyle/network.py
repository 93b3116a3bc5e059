"""Style-transfer network: multi-level style encoder, content encoder, and a
decoder that injects style per body part in two steps (adaptive instance
normalization for global traits, attention matching for local ones)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .graph import GraphLevel, build_graph_levels, part_pool, part_unpool, stgcn_layer
from .skeleton import PARTS, Skeleton, default_skeleton

LEAKY_SLOPE = 0.2
IN_AXES = (-3, -2)  # statistics over frames and vertices, per channel


@dataclass(frozen=True)
class ModelConfig:
    channels: tuple[int, int, int] = (128, 256, 512)
    k_neighbors: tuple[int, int, int] = (2, 1, 1)
    k_temporal: tuple[int, int, int] = (7, 5, 5)
    res_k_temporal: int = 3
    per_part_attention: bool = False

    @property
    def stem(self) -> int:
        return self.channels[0] // 2

    def level_channels(self, level: int) -> int:
        return self.channels[level - 1]


def tiny_config(c1: int = 32) -> ModelConfig:
    return ModelConfig(channels=(c1, 2 * c1, 4 * c1))


class ModelParams:
    """Named parameter collection; names are unique and iteration is ordered."""

    def __init__(self):
        self._params: dict[str, Parameter] = {}

    def add(self, name: str, data: np.ndarray) -> Parameter:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        p = Parameter(name, data)
        self._params[name] = p
        return p

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name].tensor

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def param(self, name: str) -> Parameter:
        return self._params[name]

    def names(self) -> list[str]:
        return list(self._params)

    def parameters(self) -> list[Parameter]:
        return list(self._params.values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self._params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for name, p in self._params.items():
            if name not in state:
                raise KeyError(f"missing parameter {name!r} in state")
            if state[name].shape != p.data.shape:
                raise ValueError(f"shape mismatch for {name!r}: {state[name].shape} vs {p.data.shape}")
            p.data = state[name]

    def count(self) -> int:
        return sum(p.data.size for p in self._params.values())

    def zero_grads(self) -> None:
        for p in self._params.values():
            p.tensor.zero_grad()

    def astype(self, dtype) -> None:
        for p in self._params.values():
            p.tensor.data = p.tensor.data.astype(dtype)


@dataclass
class StyleFeatureSet:
    """Per-level, per-part style features; parts may come from different
    motions and may have different frame counts."""

    levels: dict[int, dict[str, Tensor]] = field(default_factory=dict)

    def part(self, level: int, part: str) -> Tensor:
        return self.levels[level][part]

    @staticmethod
    def compose(assignment: dict[str, "StyleFeatureSet"]) -> "StyleFeatureSet":
        """Pick each part's features from the assigned source set."""
        missing = [p for p in PARTS if p not in assignment]
        if missing:
            raise ad.ContractError(f"unassigned body parts with no default: {missing}")
        out = StyleFeatureSet({})
        levels = assignment[PARTS[0]].levels.keys()
        for lv in levels:
            out.levels[lv] = {p: assignment[p].levels[lv][p] for p in PARTS}
        return out


def split_by_part(x: Tensor, level: GraphLevel) -> dict[str, Tensor]:
    return {p: ad.take(x, np.array(idx), axis=-2, assume_unique=True) for p, idx in level.part_vertices.items()}


def merge_parts(parts: dict[str, Tensor], level: GraphLevel) -> Tensor:
    pairs = [(parts[p], np.array(level.part_vertices[p])) for p in PARTS]
    return ad.scatter_sum(pairs, level.n_vertices, axis=-2)


# ---------------------------------------------------------------------------
# parameter construction


def _conv_shape(cfg: ModelConfig, level: int, c_in: int, c_out: int, k_t: int | None = None):
    kd = cfg.k_neighbors[level - 1] + 1
    kt = cfg.k_temporal[level - 1] if k_t is None else k_t
    return (kd, kt, c_in, c_out)


def _param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    c1, c2, c3 = cfg.channels
    stem = cfg.stem
    shapes: dict[str, tuple[int, ...]] = {}

    def conv(name, level, c_in, c_out, k_t=None):
        shapes[name + ".w"] = _conv_shape(cfg, level, c_in, c_out, k_t)
        shapes[name + ".b"] = (c_out,)

    for enc in ("style_enc", "content_enc"):
        shapes[f"{enc}.stem.w"] = (15, stem)
        shapes[f"{enc}.stem.b"] = (stem,)
        conv(f"{enc}.conv1", 1, stem, c1)
        conv(f"{enc}.conv2", 2, c1, c2)
        conv(f"{enc}.conv3", 3, c2, c3)
        conv(f"{enc}.res.c1", 3, c3, c3, cfg.res_k_temporal)
        conv(f"{enc}.res.c2", 3, c3, c3, cfg.res_k_temporal)

    conv("dec.res.c1", 3, c3, c3, cfg.res_k_temporal)
    conv("dec.res.c2", 3, c3, c3, cfg.res_k_temporal)
    for site in ("dec.res.ada1", "dec.res.ada2"):
        for p in PARTS:
            shapes[f"{site}.{p}.w"] = (c3, 2 * c3)
            shapes[f"{site}.{p}.b"] = (2 * c3,)

    for lv, c_in, c_out in ((3, c3, c2), (2, c2, c1), (1, c1, stem)):
        net = f"dec.net{lv}"
        for p in PARTS:
            shapes[f"{net}.ada.{p}.w"] = (c_in, 2 * c_in)
            shapes[f"{net}.ada.{p}.b"] = (2 * c_in,)
        conv(f"{net}.c1", lv, c_in, c_in)
        heads = [f"atn.{p}" for p in PARTS] if cfg.per_part_attention else ["atn"]
        for head in heads:
            for m in ("m", "n", "l", "out"):
                shapes[f"{net}.{head}.{m}.w"] = (c_in, c_in)
                shapes[f"{net}.{head}.{m}.b"] = (c_in,)
        conv(f"{net}.c2", lv, c_in, c_out)

    shapes["dec.out.w"] = (stem, 15)
    shapes["dec.out.b"] = (15,)
    return shapes


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> ModelParams:
    """Fan-in-scaled uniform weights, zero biases. Style-injection generators
    start at identity statistics (scale 1, shift 0) so the first forward pass
    approximates style-free decoding."""
    params = ModelParams()
    for name, shape in _param_shapes(cfg).items():
        if ".ada" in name and name.endswith(".w"):
            data = np.zeros(shape)
        elif ".ada" in name and name.endswith(".b"):
            c = shape[0] // 2
            data = np.concatenate([np.ones(c), np.zeros(c)])
        elif name.endswith(".b"):
            data = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[:-1]))
            bound = float(np.sqrt(1.0 / fan_in))
            data = rng.uniform(-bound, bound, size=shape)
        params.add(name, data)
    return params


# ---------------------------------------------------------------------------
# style injection blocks


def adain(f_d: Tensor, f_s: Tensor, gen_w: Tensor, gen_b: Tensor) -> Tensor:
    """Normalize the decoded part feature, re-statistic it from the style.

    The scale and shift are generated from the style feature by global average
    pooling over frames and vertices followed by one linear map to 2C values.
    """
    if f_d.shape[-1] != f_s.shape[-1]:
        raise ad.DimensionError(f"adain: channel mismatch {f_d.shape[-1]} vs {f_s.shape[-1]}")
    c = f_d.shape[-1]
    xn = ad.instance_norm(f_d, axes=IN_AXES)
    stats = ad.channel_stats(f_s, axes=IN_AXES)
    pooled = ad.reshape(ad.take(stats, [0], axis=-2), stats.shape[:-2] + (c,))
    gb = ad.linear(pooled, gen_w, gen_b)
    lead = gb.shape[:-1]
    gamma = ad.reshape(ad.take(gb, slice(0, c), axis=-1), lead + (1, 1, c))
    beta = ad.reshape(ad.take(gb, slice(c, 2 * c), axis=-1), lead + (1, 1, c))
    return ad.add(ad.mul(xn, gamma), beta)


def bp_adain(
    f_d: Tensor,
    style_parts: dict[str, Tensor],
    params: ModelParams,
    prefix: str,
    level: GraphLevel,
    nullify: bool = False,
) -> Tensor:
    """Apply adain independently per body part and reassemble."""
    out = {}
    for p in PARTS:
        fd_p = ad.take(f_d, np.array(level.part_vertices[p]), axis=-2, assume_unique=True)
        if nullify:
            out[p] = ad.instance_norm(fd_p, axes=IN_AXES)
        else:
            out[p] = adain(fd_p, style_parts[p], params[f"{prefix}.{p}.w"], params[f"{prefix}.{p}.b"])
    return merge_parts(out, level)


def atn(
    f_hat: Tensor,
    f_s: Tensor,
    params: ModelParams,
    prefix: str,
    sink: list | None = None,
    sink_key: tuple | None = None,
) -> Tensor:
    """Attention transfer: match channel-normalized style positions to decoded
    positions, then add the attention-weighted style projection residually."""
    if f_hat.shape[-1] != f_s.shape[-1]:
        raise ad.DimensionError(f"atn: channel mismatch {f_hat.shape[-1]} vs {f_s.shape[-1]}")
    c = f_hat.shape[-1]
    lead = f_hat.shape[:-3]
    s_ext = f_s.shape[-3] * f_s.shape[-2]
    d_ext = f_hat.shape[-3] * f_hat.shape[-2]

    sn = ad.instance_norm(f_s, axes=IN_AXES)
    dn = ad.instance_norm(f_hat, axes=IN_AXES)
    ms = ad.reshape(ad.linear(sn, params[f"{prefix}.m.w"], params[f"{prefix}.m.b"]), lead + (s_ext, c))
    nd = ad.reshape(ad.linear(dn, params[f"{prefix}.n.w"], params[f"{prefix}.n.b"]), lead + (d_ext, c))
    ls = ad.reshape(ad.linear(f_s, params[f"{prefix}.l.w"], params[f"{prefix}.l.b"]), lead + (s_ext, c))

    logits = ad.matmul(ms, nd, transpose_b=True)  # (..., S, D)
    attention = ad.softmax_over_axis(logits, axis=-2)  # columns sum to 1 over style axis
    if sink is not None:
        sink.append((sink_key, attention.data.copy()))
    att = ad.matmul(attention, ls, transpose_a=True)  # (..., D, C)
    proj = ad.linear(att, params[f"{prefix}.out.w"], params[f"{prefix}.out.b"])
    return ad.add(f_hat, ad.reshape(proj, f_hat.shape))


def bp_atn(
    f_hat: Tensor,
    style_parts: dict[str, Tensor],
    params: ModelParams,
    prefix: str,
    level: GraphLevel,
    cfg: ModelConfig,
    nullify: bool = False,
    sink: list | None = None,
) -> Tensor:
    """Per-part attention transfer, analogous to bp_adain."""
    out = {}
    for p in PARTS:
        fd_p = ad.take(f_hat, np.array(level.part_vertices[p]), axis=-2, assume_unique=True)
        if nullify:
            out[p] = fd_p
        else:
            head = f"{prefix}.{p}" if cfg.per_part_attention else prefix
            out[p] = atn(
                fd_p,
                style_parts[p],
                params,
                head,
                sink=sink,
                sink_key=(level.level, p, f_hat.shape[-3], style_parts[p].shape[-3]),
            )
    return merge_parts(out, level)


def bp_stylenet(
    f_d: Tensor,
    style_parts: dict[str, Tensor],
    params: ModelParams,
    net: str,
    level: GraphLevel,
    cfg: ModelConfig,
    nullify: bool = False,
    sink: list | None = None,
) -> Tensor:
    """One decoding block: AdaIN step, graph conv, attention step, graph conv."""
    h = bp_adain(f_d, style_parts, params, f"{net}.ada", level, nullify=nullify)
    h = ad.leaky_relu(h, LEAKY_SLOPE)
    h = stgcn_layer(h, level, params[f"{net}.c1.w"], params[f"{net}.c1.b"])
    h = bp_atn(h, style_parts, params, f"{net}.atn", level, cfg, nullify=nullify, sink=sink)
    return stgcn_layer(h, level, params[f"{net}.c2.w"], params[f"{net}.c2.b"])


def bp_resblk(
    f_d: Tensor,
    style_parts: dict[str, Tensor],
    params: ModelParams,
    level: GraphLevel,
    nullify: bool = False,
) -> Tensor:
    h = bp_adain(f_d, style_parts, params, "dec.res.ada1", level, nullify=nullify)
    h = ad.leaky_relu(h, LEAKY_SLOPE)
    h = stgcn_layer(h, level, params["dec.res.c1.w"], params["dec.res.c1.b"])
    h = bp_adain(h, style_parts, params, "dec.res.ada2", level, nullify=nullify)
    h = ad.leaky_relu(h, LEAKY_SLOPE)
    h = stgcn_layer(h, level, params["dec.res.c2.w"], params["dec.res.c2.b"])
    return ad.add(f_d, h)


# ---------------------------------------------------------------------------
# encoders / decoder cores (normalized feature domain)


def _check_t(x: Tensor) -> None:
    if x.shape[-3] % 4 != 0:
        raise ad.DimensionError(
            f"frame count {x.shape[-3]} not divisible by 4; edge-pad the clip first"
        )


def _resblk_plain(h: Tensor, params: ModelParams, prefix: str, level: GraphLevel) -> Tensor:
    r = stgcn_layer(ad.leaky_relu(h, LEAKY_SLOPE), level, params[f"{prefix}.c1.w"], params[f"{prefix}.c1.b"])
    r = stgcn_layer(ad.leaky_relu(r, LEAKY_SLOPE), level, params[f"{prefix}.c2.w"], params[f"{prefix}.c2.b"])
    return ad.add(h, r)


def _resblk_in(h: Tensor, params: ModelParams, prefix: str, level: GraphLevel) -> Tensor:
    r = ad.leaky_relu(ad.instance_norm(h, axes=IN_AXES), LEAKY_SLOPE)
    r = stgcn_layer(r, level, params[f"{prefix}.c1.w"], params[f"{prefix}.c1.b"])
    r = ad.leaky_relu(ad.instance_norm(r, axes=IN_AXES), LEAKY_SLOPE)
    r = stgcn_layer(r, level, params[f"{prefix}.c2.w"], params[f"{prefix}.c2.b"])
    return ad.add(h, r)


class StyleTransferNet:
    """Bundles parameters, config and graph levels; operates on normalized
    feature tensors shaped (..., T, 21, 15)."""

    def __init__(
        self,
        params: ModelParams,
        cfg: ModelConfig,
        skeleton: Skeleton | None = None,
    ):
        self.params = params
        self.cfg = cfg
        self.skeleton = skeleton or default_skeleton()
        self.g1, self.g2, self.g3 = build_graph_levels(self.skeleton, cfg.k_neighbors)

    @classmethod
    def create(cls, cfg: ModelConfig | None = None, seed: int = 0) -> "StyleTransferNet":
        cfg = cfg or ModelConfig()
        return cls(init_params(cfg, np.random.default_rng(seed)), cfg)

    def level(self, i: int) -> GraphLevel:
        return (self.g1, self.g2, self.g3)[i - 1]

    def encode_style(self, x: Tensor) -> StyleFeatureSet:
        """Multi-level style features; no normalization layers inside, so the
        feature statistics carry the style."""
        _check_t(x)
        p = self.params
        h = ad.linear(x, p["style_enc.stem.w"], p["style_enc.stem.b"])
        h = ad.leaky_relu(stgcn_layer(h, self.g1, p["style_enc.conv1.w"], p["style_enc.conv1.b"]), LEAKY_SLOPE)
        f1 = h
        h = part_pool(h, self.g1)
        h = ad.leaky_relu(stgcn_layer(h, self.g2, p["style_enc.conv2.w"], p["style_enc.conv2.b"]), LEAKY_SLOPE)
        f2 = h
        h = part_pool(h, self.g2)
        h = ad.leaky_relu(stgcn_layer(h, self.g3, p["style_enc.conv3.w"], p["style_enc.conv3.b"]), LEAKY_SLOPE)
        f3 = _resblk_plain(h, p, "style_enc.res", self.g3)
        return StyleFeatureSet(
            {
                1: split_by_part(f1, self.g1),
                2: split_by_part(f2, self.g2),
                3: split_by_part(f3, self.g3),
            }
        )

    def encode_content(self, x: Tensor) -> Tensor:
        """Style-invariant coarse feature; instance norm precedes every conv."""
        _check_t(x)
        p = self.params
        h = ad.linear(x, p["content_enc.stem.w"], p["content_enc.stem.b"])
        h = ad.leaky_relu(
            stgcn_layer(ad.instance_norm(h, axes=IN_AXES), self.g1, p["content_enc.conv1.w"], p["content_enc.conv1.b"]),
            LEAKY_SLOPE,
        )
        h = part_pool(h, self.g1)
        h = ad.leaky_relu(
            stgcn_layer(ad.instance_norm(h, axes=IN_AXES), self.g2, p["content_enc.conv2.w"], p["content_enc.conv2.b"]),
            LEAKY_SLOPE,
        )
        h = part_pool(h, self.g2)
        h = ad.leaky_relu(
            stgcn_layer(ad.instance_norm(h, axes=IN_AXES), self.g3, p["content_enc.conv3.w"], p["content_enc.conv3.b"]),
            LEAKY_SLOPE,
        )
        return _resblk_in(h, p, "content_enc.res", self.g3)

    def decode(
        self,
        f_c: Tensor,
        styles: StyleFeatureSet,
        nullify_style: bool = False,
        attention_sink: list | None = None,
    ) -> Tensor:
        """Progressively upscale the content feature, injecting each level's
        style; raw output is (..., T, 21, 15) in the normalized domain."""
        p, cfg = self.params, self.cfg
        h = bp_resblk(f_c, styles.levels[3], p, self.g3, nullify=nullify_style)
        h = bp_stylenet(h, styles.levels[3], p, "dec.net3", self.g3, cfg, nullify_style, attention_sink)
        h = part_unpool(h, self.g2)
        h = bp_stylenet(h, styles.levels[2], p, "dec.net2", self.g2, cfg, nullify_style, attention_sink)
        h = part_unpool(h, self.g1)
        h = bp_stylenet(h, styles.levels[1], p, "dec.net1", self.g1, cfg, nullify_style, attention_sink)
        return ad.linear(h, p["dec.out.w"], p["dec.out.b"])

    def reconstruct(self, x: Tensor) -> Tensor:
        return self.decode(self.encode_content(x), self.encode_style(x))

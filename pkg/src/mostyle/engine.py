"""Clip-level inference: stylization, per-part composition, interpolation,
attention export. Wraps the network core with normalization, padding and
checkpoint loading."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .checkpoint import load_checkpoint, split_records
from .dataset import FeatureStats
from .features import DOF, N_JOINTS, ROOT, MotionClip, edge_pad_to_multiple
from .network import ModelConfig, ModelParams, StyleFeatureSet, StyleTransferNet, init_params
from .postprocess import foot_postprocess
from .skeleton import PARTS, default_skeleton


class CheckpointMismatch(ValueError):
    pass


def infer_config(params: dict[str, np.ndarray]) -> ModelConfig:
    """Reconstruct the architecture hyperparameters from parameter shapes."""
    try:
        stem = params["style_enc.stem.w"].shape[1]
        kd1, kt1 = params["style_enc.conv1.w"].shape[:2]
        kd2, kt2 = params["style_enc.conv2.w"].shape[:2]
        kd3, kt3 = params["style_enc.conv3.w"].shape[:2]
        res_kt = params["style_enc.res.c1.w"].shape[1]
    except KeyError as exc:
        raise CheckpointMismatch(f"checkpoint lacks required parameter: {exc}") from exc
    per_part = "dec.net1.atn.LL.m.w" in params
    return ModelConfig(
        channels=(2 * stem, 4 * stem, 8 * stem),
        k_neighbors=(kd1 - 1, kd2 - 1, kd3 - 1),
        k_temporal=(kt1, kt2, kt3),
        res_k_temporal=res_kt,
        per_part_attention=per_part,
    )


@dataclass
class PartAssignment:
    """Per part: a target clip id or "source" to keep the original style."""

    targets: dict[str, str] = field(default_factory=dict)
    alphas: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        for p in self.targets:
            if p not in PARTS:
                raise ValueError(f"unknown body part {p!r}")
        for p, a in self.alphas.items():
            if p not in PARTS:
                raise ValueError(f"unknown body part {p!r}")
            if not 0.0 <= a <= 1.0:
                raise ValueError(f"alpha for {p} must be in [0, 1], got {a}")

    def target(self, part: str) -> str:
        return self.targets.get(part, "source")

    def alpha(self, part: str) -> float:
        return self.alphas.get(part, 1.0)


def _resample_time(data: np.ndarray, new_t: int) -> np.ndarray:
    """Linear time resampling of a (T, V, C) feature map."""
    t = data.shape[0]
    if t == new_t:
        return data
    pos = np.linspace(0, t - 1, new_t)
    i0 = np.floor(pos).astype(int)
    i1 = np.minimum(i0 + 1, t - 1)
    w = (pos - i0)[:, None, None]
    return data[i0] * (1 - w) + data[i1] * w


def interpolate_styles(a: StyleFeatureSet, b: StyleFeatureSet, alphas: dict[str, float]) -> StyleFeatureSet:
    """Per-part linear interpolation (1-alpha)*a + alpha*b in the style space.

    The space is unnormalized, so interpolation is linear rather than
    spherical. If the two sets have different frame counts, b is linearly
    resampled in time to match a.
    """
    out = StyleFeatureSet({})
    for lv, parts in a.levels.items():
        out.levels[lv] = {}
        for p in PARTS:
            alpha = alphas.get(p, 1.0)
            fa = parts[p].data
            if alpha <= 0.0:
                out.levels[lv][p] = Tensor(fa)
                continue
            fb = _resample_time(b.levels[lv][p].data, fa.shape[0])
            if alpha >= 1.0:
                out.levels[lv][p] = b.levels[lv][p] if fb.shape == b.levels[lv][p].shape else Tensor(fb)
            else:
                out.levels[lv][p] = Tensor((1.0 - alpha) * fa + alpha * fb)
    return out


def collapse_root_channels(features: np.ndarray) -> np.ndarray:
    """Average the per-joint root-velocity triplets into one replicated track."""
    out = features.copy()
    out[..., :, ROOT] = features[..., :, ROOT].mean(axis=-2, keepdims=True)
    return out


class StylizeEngine:
    """A trained model plus its normalization statistics."""

    def __init__(self, net: StyleTransferNet, stats: FeatureStats):
        self.net = net
        self.stats = stats

    @classmethod
    def from_checkpoint(cls, path: str | Path, use_ema: bool = True) -> "StylizeEngine":
        records, stats = load_checkpoint(path)
        params_raw, ema, _opt, _meta = split_records(records)
        cfg = infer_config(params_raw)
        params = ModelParams()
        for name, data in sorted(params_raw.items()):
            params.add(name, data.astype(np.float64))
        if use_ema and ema:
            params.load_state({k: v.astype(np.float64) for k, v in ema.items()})
        net = StyleTransferNet(params, cfg, default_skeleton())
        return cls(net, stats)

    @classmethod
    def fresh(cls, cfg: ModelConfig | None = None, seed: int = 0, stats: FeatureStats | None = None) -> "StylizeEngine":
        cfg = cfg or ModelConfig()
        net = StyleTransferNet(init_params(cfg, np.random.default_rng(seed)), cfg)
        return cls(net, stats or FeatureStats.identity())

    # -- clip-level ops ------------------------------------------------------

    def _prep(self, clip: MotionClip) -> tuple[Tensor, int]:
        padded, orig_t = edge_pad_to_multiple(clip, 4)
        return Tensor(self.stats.normalize(padded.features)), orig_t

    def style_encode(self, clip: MotionClip) -> StyleFeatureSet:
        with ad.no_grad():
            x, _ = self._prep(clip)
            return self.net.encode_style(x)

    def content_encode(self, clip: MotionClip) -> Tensor:
        with ad.no_grad():
            x, _ = self._prep(clip)
            return self.net.encode_content(x)

    def decode(
        self,
        content: Tensor,
        styles: StyleFeatureSet,
        fps: int = 60,
        nullify_style: bool = False,
        attention_sink: list | None = None,
        trim_to: int | None = None,
    ) -> MotionClip:
        with ad.no_grad():
            raw = self.net.decode(content, styles, nullify_style=nullify_style, attention_sink=attention_sink)
        feats = collapse_root_channels(raw.data)
        feats = self.stats.denormalize(feats)
        if trim_to is not None:
            feats = feats[:trim_to]
        return MotionClip(feats, fps=fps)

    def reconstruct(self, clip: MotionClip) -> MotionClip:
        content = self.content_encode(clip)
        styles = self.style_encode(clip)
        return self.decode(content, styles, fps=clip.fps, trim_to=len(clip))

    def stylize(
        self,
        source: MotionClip,
        assignment: PartAssignment,
        target_clips: dict[str, MotionClip],
        postprocess: bool = False,
    ) -> MotionClip:
        """Per-part style transfer with optional per-part interpolation toward
        the target style and optional foot-contact cleanup."""
        content = self.content_encode(source)
        source_styles = self.style_encode(source)
        encoded: dict[str, StyleFeatureSet] = {}
        for clip_id, clip in target_clips.items():
            encoded[clip_id] = self.style_encode(clip)

        per_part: dict[str, StyleFeatureSet] = {}
        alphas: dict[str, float] = {}
        for p in PARTS:
            ref = assignment.target(p)
            if ref == "source":
                per_part[p] = source_styles
                alphas[p] = 0.0
            else:
                if ref not in encoded:
                    raise KeyError(f"part {p} references unknown clip {ref!r}")
                per_part[p] = encoded[ref]
                alphas[p] = assignment.alpha(p)
        composed = StyleFeatureSet.compose(per_part)
        styles = interpolate_styles(source_styles, composed, alphas)
        out = self.decode(content, styles, fps=source.fps, trim_to=len(source))
        if postprocess:
            out = foot_postprocess(source, out, self.net.skeleton)
        return out

    def attention_map(self, source: MotionClip, target: MotionClip, part: str, level: int) -> np.ndarray:
        """Spatially averaged attention between target (style) and source
        (content) at one level, shape (T_s/2^(3-level)... style rows, content
        columns after temporal pooling at that level)."""
        if part not in PARTS:
            raise ValueError(f"unknown body part {part!r}")
        content = self.content_encode(source)
        styles = self.style_encode(target)
        sink: list = []
        self.decode(content, styles, attention_sink=sink)
        for (lv, p, t_d, t_s), matrix in sink:
            if lv == level and p == part:
                v = matrix.shape[0] // t_s
                grid = matrix.reshape(t_s, v, t_d, v)
                return grid.mean(axis=(1, 3))
        raise KeyError(f"no attention recorded for part {part} at level {level}")

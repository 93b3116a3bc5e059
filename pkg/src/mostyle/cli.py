"""Command-line interface.

Verbs: train, stylize, reconstruct, interpolate, eval-msd, eval-fmd,
export-attention, inspect-graph, plus the data utilities prepare and
synth-data. Evaluation commands write CSV next to a rendered figure.

Exit codes: 0 ok, 1 usage error, 2 numeric abort, 3 I/O error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .bvh import BvhParseError, RetargetError, parse_bvh, write_bvh
from .checkpoint import CheckpointError
from .dataset import (
    ArchiveError,
    ClipArchive,
    FeatureStats,
    build_synthetic_archive,
    read_clip,
    write_clip,
)
from .engine import CheckpointMismatch, PartAssignment, StylizeEngine, interpolate_styles
from .features import MotionClip, clip_dataset, clip_to_raw, extract_features, integrate_root, mirror, to_world
from .graph import build_graph_levels, describe_graph_levels
from .metrics import fmd, msd_metric, msd_threshold_report
from .network import ModelConfig, StyleFeatureSet, StyleTransferNet, init_params
from .report import (
    read_csv_matrix,
    save_attention_heatmap,
    save_graph_diagram,
    save_loss_curves,
    save_msd_bars,
    save_trajectories,
    write_csv_matrix,
)
from .skeleton import PARTS, default_skeleton
from .training import NumericAbort, TrainConfig, resume_state, train

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERIC = 2
EXIT_IO = 3


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def load_motion(path: str | Path, scale: float = 1.0) -> MotionClip:
    path = Path(path)
    if path.suffix == ".bvh":
        skeleton, raw = parse_bvh(path.read_text(), scale=scale)
        return extract_features(raw, skeleton)
    return read_clip(path)


def save_motion(clip: MotionClip, path: str | Path, fmt: str, scale: float = 1.0) -> None:
    path = Path(path)
    if fmt == "mpz":
        write_clip(path, clip)
    elif fmt == "bvh":
        skeleton = default_skeleton()
        raw = clip_to_raw(clip, skeleton)
        path.write_text(write_bvh(skeleton, raw, scale=scale))
    elif fmt == "csv":
        flat = clip.features.reshape(len(clip), -1)
        write_csv_matrix(path, flat)
    else:
        raise UsageError(f"unknown format {fmt!r}")


def _parse_part_specs(specs: list[str] | None, value_parser=str) -> dict[str, object]:
    out = {}
    for spec in specs or []:
        if "=" not in spec:
            raise UsageError(f"expected PART=VALUE, got {spec!r}")
        part, value = spec.split("=", 1)
        if part not in PARTS:
            raise UsageError(f"unknown body part {part!r} (use one of {', '.join(PARTS)})")
        out[part] = value_parser(value)
    return out


def _model_config_from_json(raw: dict) -> ModelConfig:
    kw = {}
    if "channels" in raw:
        kw["channels"] = tuple(raw["channels"])
    for key in ("k_neighbors", "k_temporal"):
        if key in raw:
            kw[key] = tuple(raw[key])
    for key in ("res_k_temporal", "per_part_attention"):
        if key in raw:
            kw[key] = raw[key]
    return ModelConfig(**kw)


# ---------------------------------------------------------------------------
# subcommands


def cmd_train(args) -> int:
    import json

    model_cfg = ModelConfig()
    cfg = TrainConfig()
    if args.config:
        with open(args.config) as fh:
            raw = json.load(fh)
        model_raw = raw.pop("model", {})
        model_cfg = _model_config_from_json(model_raw)
        if "betas" in raw:
            raw["betas"] = tuple(raw["betas"])
        cfg = TrainConfig(**raw)
    if args.seed is not None:
        cfg.seed = args.seed

    archive = ClipArchive.load(args.archive)
    stats_path = Path(args.archive) / "stats.csv"
    stats = FeatureStats.load_csv(stats_path) if stats_path.exists() else FeatureStats.compute(archive.clips())

    net = StyleTransferNet(init_params(model_cfg, np.random.default_rng(cfg.seed)), model_cfg)
    start, optimizer, ema = 0, None, None
    if args.resume:
        optimizer, ema, start, stats = resume_state(args.resume, net, cfg)
    out_dir = Path(args.out)
    train(net, archive, stats, cfg, out_dir, start_step=start, optimizer=optimizer, ema=ema)
    save_loss_curves(out_dir / "train_log.csv", out_dir / "loss_curves.png")
    print(f"trained {cfg.steps - start} steps -> {out_dir}")
    return EXIT_OK


def _assignment_from_args(args) -> tuple[PartAssignment, dict[str, MotionClip]]:
    part_specs = _parse_part_specs(args.part)
    alpha_specs = _parse_part_specs(args.alpha, float)
    targets: dict[str, str] = {}
    clips: dict[str, MotionClip] = {}
    for part, ref in part_specs.items():
        if ref == "source":
            targets[part] = "source"
        else:
            targets[part] = str(ref)
            if ref not in clips:
                clips[str(ref)] = load_motion(ref)
    return PartAssignment(targets=targets, alphas=alpha_specs), clips


def cmd_stylize(args) -> int:
    engine = StylizeEngine.from_checkpoint(args.checkpoint, use_ema=not args.no_ema)
    source = load_motion(args.source)
    assignment, clips = _assignment_from_args(args)
    out = engine.stylize(source, assignment, clips, postprocess=args.postprocess == "on")
    save_motion(out, args.out, args.format)
    print(f"stylized {args.source} -> {args.out}")
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    engine = StylizeEngine.from_checkpoint(args.checkpoint, use_ema=not args.no_ema)
    source = load_motion(args.source)
    out = engine.reconstruct(source)
    save_motion(out, args.out, args.format)
    gap = float(np.abs(out.features - source.features).mean())
    print(f"reconstruction written to {args.out} (mean L1 gap {gap:.6f})")
    return EXIT_OK


def cmd_interpolate(args) -> int:
    engine = StylizeEngine.from_checkpoint(args.checkpoint, use_ema=not args.no_ema)
    source = load_motion(args.source)
    style_a = engine.style_encode(load_motion(args.style_from))
    style_b = engine.style_encode(load_motion(args.style_to))
    parts = args.part or list(PARTS)
    for p in parts:
        if p not in PARTS:
            raise UsageError(f"unknown body part {p!r}")
    content = engine.content_encode(source)
    source_styles = engine.style_encode(source)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    tracks = []
    for i, alpha in enumerate(np.linspace(0.0, 1.0, args.steps)):
        blend = interpolate_styles(style_a, style_b, {p: float(alpha) for p in PARTS})
        chosen = StyleFeatureSet.compose(
            {p: (blend if p in parts else source_styles) for p in PARTS}
        )
        clip = engine.decode(content, chosen, fps=source.fps, trim_to=len(source))
        path = out_dir / f"alpha_{alpha:.3f}.{args.format}"
        save_motion(clip, path, args.format)
        positions, _ = integrate_root(clip)
        tracks.append((f"a={alpha:.2f}", positions))
    save_trajectories(tracks, out_dir / "interpolation_paths.png")
    print(f"{args.steps} interpolated clips -> {out_dir}")
    return EXIT_OK


def cmd_eval_msd(args) -> int:
    source = load_motion(args.source)
    output = load_motion(args.output)
    skeleton = default_skeleton()
    msd = msd_metric(to_world(source), to_world(output), skeleton.height)
    report = msd_threshold_report(msd)
    base = Path(args.out)
    write_csv_matrix(base.with_suffix(".csv"), msd.reshape(1, -1))
    save_msd_bars(msd, base.with_suffix(".png"))
    for thr, joints in report.items():
        print(f"MSD > {thr}: {joints}")
    return EXIT_OK


def _embed_clips(engine: StylizeEngine, clip_dir: Path) -> np.ndarray:
    """Style-encoder level-3 features pooled over frames and vertices."""
    vectors = []
    for path in sorted(clip_dir.glob("*.mpz")) + sorted(clip_dir.glob("*.bvh")):
        clip = load_motion(path)
        styles = engine.style_encode(clip)
        feats = np.concatenate([styles.levels[3][p].data.mean(axis=(0, 1)) for p in PARTS])
        vectors.append(feats)
    if len(vectors) < 2:
        raise UsageError(f"need at least 2 clips in {clip_dir}")
    return np.stack(vectors)


def cmd_eval_fmd(args) -> int:
    if args.features_a and args.features_b:
        feats_a = read_csv_matrix(args.features_a)
        feats_b = read_csv_matrix(args.features_b)
    elif args.clips_a and args.clips_b:
        if not args.checkpoint:
            raise UsageError("--checkpoint is required to embed clip directories")
        engine = StylizeEngine.from_checkpoint(args.checkpoint, use_ema=not args.no_ema)
        feats_a = _embed_clips(engine, Path(args.clips_a))
        feats_b = _embed_clips(engine, Path(args.clips_b))
    else:
        raise UsageError("provide --features-a/--features-b or --clips-a/--clips-b")
    value = fmd(feats_a, feats_b)
    print(f"FMD: {value:.6f}")
    if args.out:
        write_csv_matrix(args.out, np.array([[value]]))
    return EXIT_OK


def cmd_export_attention(args) -> int:
    engine = StylizeEngine.from_checkpoint(args.checkpoint, use_ema=not args.no_ema)
    source = load_motion(args.source)
    target = load_motion(args.target)
    matrix = engine.attention_map(source, target, args.part, args.level)
    base = Path(args.out)
    write_csv_matrix(base.with_suffix(".csv"), matrix)
    save_attention_heatmap(matrix, base.with_suffix(".png"))
    print(f"attention map {matrix.shape} -> {base.with_suffix('.csv')}")
    return EXIT_OK


def cmd_inspect_graph(args) -> int:
    levels = build_graph_levels(default_skeleton())
    text = describe_graph_levels(levels)
    base = Path(args.out)
    base.with_suffix(".txt").write_text(text)
    save_graph_diagram(levels, base.with_suffix(".png"))
    print(text, end="")
    return EXIT_OK


def cmd_prepare(args) -> int:
    skeleton = default_skeleton()
    archive = ClipArchive(args.out)
    count = 0
    bvh_dir = Path(args.bvh_dir)
    files = sorted(bvh_dir.glob("*.bvh"))
    if not files:
        raise ArchiveError(f"no BVH files in {bvh_dir}")
    for path in files:
        parsed_skeleton, raw = parse_bvh(path.read_text(), scale=args.scale)
        clip = extract_features(raw, parsed_skeleton)
        for window in clip_dataset(clip, window=args.window, overlap=args.overlap):
            start = count
            archive.add(window, f"clip{count:05d}", source=path.name, start_frame=start)
            count += 1
            if args.mirror:
                archive.add(mirror(window), f"clip{count:05d}", source=path.name, start_frame=start, mirrored=True)
                count += 1
    archive.save()
    stats = FeatureStats.compute(archive.clips())
    stats.save_csv(Path(args.out) / "stats.csv")
    print(f"{count} clips -> {args.out}")
    return EXIT_OK


def cmd_synth_data(args) -> int:
    build_synthetic_archive(args.out, n_clips=args.clips, frames=args.frames, seed=args.seed or 0)
    print(f"{args.clips} synthetic clips -> {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="mostyle", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p, checkpoint=True):
        if checkpoint:
            p.add_argument("--checkpoint", required=True)
            p.add_argument("--no-ema", action="store_true", help="use raw instead of averaged parameters")
        p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("train", help="optimize a model on a clip archive")
    p.add_argument("--archive", required=True)
    p.add_argument("--config", help="JSON with training and model settings")
    p.add_argument("--out", required=True)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("stylize", help="transfer per-part styles onto a source motion")
    common(p)
    p.add_argument("--source", required=True)
    p.add_argument("--part", action="append", metavar="P=CLIP|source")
    p.add_argument("--alpha", action="append", metavar="P=FLOAT")
    p.add_argument("--postprocess", choices=("on", "off"), default="off")
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("mpz", "bvh", "csv"), default="mpz")
    p.set_defaults(func=cmd_stylize)

    p = sub.add_parser("reconstruct", help="encode and decode a motion with its own style")
    common(p)
    p.add_argument("--source", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("mpz", "bvh", "csv"), default="mpz")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("interpolate", help="sweep the style interpolation parameter")
    common(p)
    p.add_argument("--source", required=True)
    p.add_argument("--from", dest="style_from", required=True)
    p.add_argument("--to", dest="style_to", required=True)
    p.add_argument("--steps", type=int, default=5)
    p.add_argument("--part", action="append", help="restrict interpolation to these parts")
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("mpz", "bvh", "csv"), default="mpz")
    p.set_defaults(func=cmd_interpolate)

    p = sub.add_parser("eval-msd", help="per-joint displacement between two motions")
    p.add_argument("--source", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--out", required=True, help="basename for .csv and .png")
    p.set_defaults(func=cmd_eval_msd)

    p = sub.add_parser("eval-fmd", help="Frechet distance between feature populations")
    p.add_argument("--features-a")
    p.add_argument("--features-b")
    p.add_argument("--clips-a")
    p.add_argument("--clips-b")
    p.add_argument("--checkpoint")
    p.add_argument("--no-ema", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval_fmd)

    p = sub.add_parser("export-attention", help="dump one part/level attention map")
    common(p)
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--part", required=True, choices=PARTS)
    p.add_argument("--level", type=int, required=True, choices=(1, 2, 3))
    p.add_argument("--out", required=True, help="basename for .csv and .png")
    p.set_defaults(func=cmd_export_attention)

    p = sub.add_parser("inspect-graph", help="dump the graph levels as text and a diagram")
    p.add_argument("--out", required=True, help="basename for .txt and .png")
    p.set_defaults(func=cmd_inspect_graph)

    p = sub.add_parser("prepare", help="build a clip archive from BVH files")
    p.add_argument("--bvh-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--scale", type=float, default=1.0, help="file units to meters")
    p.add_argument("--window", type=int, default=120)
    p.add_argument("--overlap", type=int, default=60)
    p.add_argument("--mirror", action=argparse.BooleanOptionalAction, default=True)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("synth-data", help="generate a synthetic clip archive")
    p.add_argument("--out", required=True)
    p.add_argument("--clips", type=int, default=8)
    p.add_argument("--frames", type=int, default=120)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth_data)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericAbort, ad.NumericError) as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (
        FileNotFoundError,
        ArchiveError,
        CheckpointError,
        CheckpointMismatch,
        BvhParseError,
        RetargetError,
        OSError,
    ) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ad.ContractError, ad.DimensionError, ValueError, KeyError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

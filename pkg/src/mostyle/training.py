"""End-to-end training: per-part style mixing, the four loss terms, the
rectified adaptive-moment optimizer, and parameter averaging."""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .checkpoint import EMA_PREFIX, META_PREFIX, OPT_PREFIX, load_checkpoint, save_checkpoint, split_records
from .dataset import ClipArchive, FeatureStats, sample_pair_batch
from .features import ROOT
from .network import ModelParams, StyleFeatureSet, StyleTransferNet
from .skeleton import PARTS


class NumericAbort(ArithmeticError):
    """Training hit a non-finite loss; message names the offending term."""


@dataclass
class TrainConfig:
    lambda_cyc: float = 1.0
    lambda_root: float = 1.0
    lambda_sm: float = 1.0
    mix_prob: float = 0.5
    lr: float = 1e-4
    batch_size: int = 8
    steps: int = 2000
    betas: tuple[float, float] = (0.0, 0.99)
    ema_decay: float = 0.999
    crop_rate: float = 0.2
    seed: int = 0
    dtype: str = "float32"  # training precision; gradient tests always run in float64
    rectified: bool = True
    checkpoint_every: int = 500
    smoothness_printed_form: bool = False  # keep the published cycle pairing verbatim

    def __post_init__(self):
        if not 0.0 <= self.mix_prob <= 1.0:
            raise ValueError("mix_prob must be in [0, 1]")
        if min(self.lambda_cyc, self.lambda_root, self.lambda_sm) < 0:
            raise ValueError("loss weights must be non-negative")
        if not 0.0 <= self.crop_rate <= 1.0:
            raise ValueError("crop_rate must be in [0, 1]")

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    @staticmethod
    def from_json(path: str | Path) -> "TrainConfig":
        with open(path) as fh:
            raw = json.load(fh)
        if "betas" in raw:
            raw["betas"] = tuple(raw["betas"])
        return TrainConfig(**raw)

    def to_json(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=2)


@dataclass
class LossReport:
    step: int
    l_rec: float
    l_cyc: float
    l_root: float
    l_sm: float
    total: float
    wall_ms: float = 0.0

    CSV_HEADER = "step,l_rec,l_cyc,l_root,l_sm,total,wall_ms"

    def csv_row(self) -> str:
        return (
            f"{self.step},{self.l_rec!r},{self.l_cyc!r},{self.l_root!r},"
            f"{self.l_sm!r},{self.total!r},{self.wall_ms:.3f}"
        )


# ---------------------------------------------------------------------------
# style mixing (per-sample, per-part substitution)


def draw_switch_mask(rng: np.random.Generator, mix_prob: float) -> np.ndarray:
    """One boolean row per the mixing procedure: True = take the source part.

    With probability ``mix_prob`` a uniform 1..5 count of distinct parts is
    switched to the source style; otherwise every part keeps the target style.
    """
    mask = np.zeros(len(PARTS), dtype=bool)
    if rng.random() < mix_prob:
        n_switch = int(rng.integers(1, 6))
        idx = rng.choice(len(PARTS), size=n_switch, replace=False)
        mask[idx] = True
    return mask


def mix_styles(
    src: StyleFeatureSet,
    tar: StyleFeatureSet,
    rng: np.random.Generator,
    mix_prob: float = 0.5,
) -> StyleFeatureSet:
    """Blend two style sets part-wise. Batched inputs draw one mask per sample;
    the same mask applies at all three levels so a part stays internally
    consistent."""
    probe = src.levels[1][PARTS[0]]
    batched = probe.ndim == 4
    n = probe.shape[0] if batched else 1
    masks = np.stack([draw_switch_mask(rng, mix_prob) for _ in range(n)])  # (n, 5)

    out = StyleFeatureSet({})
    for lv, parts in src.levels.items():
        out.levels[lv] = {}
        for pi, p in enumerate(PARTS):
            col = masks[:, pi]
            if col.all():
                out.levels[lv][p] = parts[p]
            elif not col.any():
                out.levels[lv][p] = tar.levels[lv][p]
            else:
                sel = Tensor(col.astype(parts[p].dtype).reshape(n, 1, 1, 1))
                inv = Tensor((~col).astype(parts[p].dtype).reshape(n, 1, 1, 1))
                out.levels[lv][p] = ad.add(ad.mul(parts[p], sel), ad.mul(tar.levels[lv][p], inv))
    return out


# ---------------------------------------------------------------------------
# loss terms


def l1_mean(a: Tensor, b: Tensor) -> Tensor:
    return ad.mean_all(ad.abs_(ad.sub(a, b)))


def root_velocity(x: Tensor) -> Tensor:
    """The (dx, dz, dangle) track: root channels averaged over the joint rows."""
    r = ad.take(x, ROOT, axis=-1)
    n_joints = x.shape[-2]
    return ad.gather_weighted_sum(r, np.full((1, n_joints), 1.0 / n_joints), axis=-2)


def frame_differences(x: Tensor) -> Tensor:
    a = ad.take(x, slice(1, None), axis=-3)
    b = ad.take(x, slice(0, -1), axis=-3)
    return ad.sub(a, b)


def smoothness_term(out: Tensor, ref: Tensor) -> Tensor:
    return l1_mean(frame_differences(out), frame_differences(ref))


@dataclass
class StepTensors:
    """Loss scalars still attached to the tape, plus the report values."""

    total: Tensor
    report: LossReport


def compute_losses(
    net: StyleTransferNet,
    x_src: Tensor,
    x_tar: Tensor,
    cfg: TrainConfig,
    rng: np.random.Generator,
    step: int = 0,
) -> StepTensors:
    """All four loss terms on one batch, in normalized feature units."""
    fs_src = net.encode_style(x_src)
    fs_tar = net.encode_style(x_tar)
    fc_src = net.encode_content(x_src)
    fc_tar = net.encode_content(x_tar)

    rec_src = net.decode(fc_src, fs_src)
    rec_tar = net.decode(fc_tar, fs_tar)
    l_rec = ad.add(l1_mean(rec_src, x_src), l1_mean(rec_tar, x_tar))

    dtype = x_src.dtype
    zero = Tensor(np.asarray(0.0, dtype=dtype))
    need_mix = cfg.lambda_cyc > 0 or cfg.lambda_root > 0
    l_cyc = zero
    l_root = zero
    cyc_src = cyc_tar = None
    if need_mix:
        mixed = mix_styles(fs_src, fs_tar, rng, cfg.mix_prob)
        out_mix = net.decode(fc_src, mixed)
        if cfg.lambda_root > 0:
            l_root = l1_mean(root_velocity(out_mix), root_velocity(x_src))
        if cfg.lambda_cyc > 0:
            out_full = net.decode(fc_src, fs_tar)
            cyc_src = net.decode(net.encode_content(out_mix), fs_src)
            cyc_tar = net.decode(fc_tar, net.encode_style(out_full))
            l_cyc = ad.add(l1_mean(cyc_src, x_src), l1_mean(cyc_tar, x_tar))

    l_sm = ad.add(smoothness_term(rec_src, x_src), smoothness_term(rec_tar, x_tar))
    if cyc_src is not None:
        if cfg.smoothness_printed_form:
            pairs = ((cyc_tar, x_src), (cyc_tar, x_tar))
        else:
            pairs = ((cyc_src, x_src), (cyc_tar, x_tar))
        for out, ref in pairs:
            l_sm = ad.add(l_sm, smoothness_term(out, ref))

    total = l_rec
    for weight, term in ((cfg.lambda_cyc, l_cyc), (cfg.lambda_root, l_root), (cfg.lambda_sm, l_sm)):
        if weight != 0:
            total = ad.add(total, ad.mul(Tensor(np.asarray(weight, dtype=dtype)), term))

    vals = {"l_rec": l_rec.item(), "l_cyc": l_cyc.item(), "l_root": l_root.item(), "l_sm": l_sm.item()}
    for name, v in vals.items():
        if not np.isfinite(v):
            raise NumericAbort(f"non-finite loss term {name} at step {step}")
    # reported total is the weighted sum of the reported terms, so the report
    # identity is exact regardless of training precision
    vals["total"] = (
        vals["l_rec"]
        + cfg.lambda_cyc * vals["l_cyc"]
        + cfg.lambda_root * vals["l_root"]
        + cfg.lambda_sm * vals["l_sm"]
    )
    report = LossReport(step=step, **vals)
    return StepTensors(total=total, report=report)


# ---------------------------------------------------------------------------
# optimizer and parameter averaging


class RectifiedAdam:
    """Adaptive moments with bias correction and rectified variance warmup.

    With ``rectified=False`` this is the plain adaptive-moment update.
    """

    def __init__(self, params: ModelParams, lr: float = 1e-4, betas: tuple[float, float] = (0.0, 0.99), eps: float = 1e-8, rectified: bool = True):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.rectified = rectified
        self.t = 0
        self.m = {p.name: np.zeros_like(p.data) for p in params.parameters()}
        self.v = {p.name: np.zeros_like(p.data) for p in params.parameters()}

    def step(self) -> None:
        self.t += 1
        b1, b2, t = self.beta1, self.beta2, self.t
        rho_inf = 2.0 / (1.0 - b2) - 1.0
        rho = rho_inf - 2.0 * t * b2**t / (1.0 - b2**t)
        for p in self.params.parameters():
            g = p.tensor.grad
            if g is None:
                continue
            m = self.m[p.name]
            v = self.v[p.name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            m_hat = m / (1.0 - b1**t)
            if self.rectified and rho <= 4.0:
                update = self.lr * m_hat
            else:
                v_hat = np.sqrt(v / (1.0 - b2**t))
                update = self.lr * m_hat / (v_hat + self.eps)
                if self.rectified:
                    r = np.sqrt(
                        ((rho - 4.0) * (rho - 2.0) * rho_inf)
                        / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho)
                    )
                    update *= r
            p.data = p.data - update

    def state_records(self) -> dict[str, np.ndarray]:
        recs = {f"m/{k}": v for k, v in self.m.items()}
        recs.update({f"v/{k}": v for k, v in self.v.items()})
        return recs

    def load_state_records(self, recs: dict[str, np.ndarray], t: int) -> None:
        dtype = next(iter(self.m.values())).dtype if self.m else np.float64
        for k in self.m:
            self.m[k] = recs[f"m/{k}"].astype(dtype)
            self.v[k] = recs[f"v/{k}"].astype(dtype)
        self.t = t


class EmaState:
    def __init__(self, params: ModelParams, decay: float = 0.999):
        self.decay = decay
        self.shadow = {p.name: p.data.copy() for p in params.parameters()}

    def update(self, params: ModelParams) -> None:
        d = self.decay
        for p in params.parameters():
            s = self.shadow[p.name]
            s *= d
            s += (1 - d) * p.data


# ---------------------------------------------------------------------------
# loop


def step_rng(seed: int, step: int) -> np.random.Generator:
    """Deterministic per-step stream; resuming at step k replays the same draws."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(step,)))


def train_step(
    net: StyleTransferNet,
    batch: tuple[np.ndarray, np.ndarray],
    optimizer: RectifiedAdam,
    ema: EmaState,
    cfg: TrainConfig,
    rng: np.random.Generator,
    step: int = 0,
) -> LossReport:
    t0 = time.perf_counter()
    x_src = Tensor(batch[0])
    x_tar = Tensor(batch[1])
    out = compute_losses(net, x_src, x_tar, cfg, rng, step=step)
    net.params.zero_grads()
    ad.backward(out.total)
    optimizer.step()
    ema.update(net.params)
    out.report.wall_ms = (time.perf_counter() - t0) * 1000.0
    return out.report


def train(
    net: StyleTransferNet,
    archive: ClipArchive,
    stats: FeatureStats,
    cfg: TrainConfig,
    out_dir: str | Path,
    start_step: int = 0,
    optimizer: RectifiedAdam | None = None,
    ema: EmaState | None = None,
    log_fh=None,
) -> list[LossReport]:
    """Run the optimization loop, writing the CSV log and periodic checkpoints."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dtype = cfg.np_dtype
    if dtype == np.float32:
        # keep normalization constants exactly representable in checkpoints so
        # a resumed run replays the uninterrupted one bit for bit
        stats = FeatureStats(
            stats.mean.astype(np.float32).astype(np.float64),
            stats.std.astype(np.float32).astype(np.float64),
        )
    net.params.astype(dtype)
    optimizer = optimizer or RectifiedAdam(net.params, cfg.lr, cfg.betas, rectified=cfg.rectified)
    ema = ema or EmaState(net.params, cfg.ema_decay)

    own_log = log_fh is None
    if own_log:
        mode = "a" if start_step > 0 else "w"
        log_fh = open(out_dir / "train_log.csv", mode)
        if start_step == 0:
            log_fh.write(LossReport.CSV_HEADER + "\n")
    reports = []
    try:
        for step in range(start_step, cfg.steps):
            rng = step_rng(cfg.seed, step)
            batch = sample_pair_batch(archive, stats, cfg.batch_size, rng, cfg.crop_rate, dtype=dtype)
            report = train_step(net, batch, optimizer, ema, cfg, rng, step=step)
            reports.append(report)
            log_fh.write(report.csv_row() + "\n")
            if cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
                save_training_checkpoint(out_dir / f"ckpt_{step + 1:06d}.mpck", net, stats, optimizer, ema, step + 1)
        save_training_checkpoint(out_dir / "ckpt_final.mpck", net, stats, optimizer, ema, cfg.steps)
    finally:
        if own_log:
            log_fh.close()
    return reports


def save_training_checkpoint(
    path: str | Path,
    net: StyleTransferNet,
    stats: FeatureStats,
    optimizer: RectifiedAdam | None = None,
    ema: EmaState | None = None,
    step: int = 0,
) -> None:
    records: dict[str, np.ndarray] = dict(net.params.state_dict())
    if ema is not None:
        records.update({EMA_PREFIX + k: v for k, v in ema.shadow.items()})
    if optimizer is not None:
        records.update({OPT_PREFIX + k: v for k, v in optimizer.state_records().items()})
    records[META_PREFIX + "step"] = np.array([step], dtype=np.float32)
    save_checkpoint(path, records, stats)


def resume_state(path: str | Path, net: StyleTransferNet, cfg: TrainConfig) -> tuple[RectifiedAdam, EmaState, int, FeatureStats]:
    """Restore parameters, optimizer moments and the EMA shadow from a file."""
    records, stats = load_checkpoint(path)
    params, ema_recs, opt_recs, meta = split_records(records)
    dtype = cfg.np_dtype
    net.params.load_state({k: v.astype(dtype) for k, v in params.items()})
    step = int(meta.get("step", np.array([0]))[0])
    optimizer = RectifiedAdam(net.params, cfg.lr, cfg.betas, rectified=cfg.rectified)
    if opt_recs:
        optimizer.load_state_records(opt_recs, t=step)
    ema = EmaState(net.params, cfg.ema_decay)
    if ema_recs:
        ema.shadow = {k: v.astype(dtype) for k, v in ema_recs.items()}
    return optimizer, ema, step, stats

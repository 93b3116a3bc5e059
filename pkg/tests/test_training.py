import numpy as np
import pytest

from mostyle import autodiff as ad
from mostyle.autodiff import Tensor
from mostyle.dataset import FeatureStats, build_synthetic_archive, sample_pair_batch
from mostyle.network import StyleFeatureSet, StyleTransferNet, tiny_config
from mostyle.skeleton import PARTS
from mostyle.training import (
    EmaState,
    LossReport,
    NumericAbort,
    RectifiedAdam,
    TrainConfig,
    compute_losses,
    draw_switch_mask,
    frame_differences,
    l1_mean,
    mix_styles,
    root_velocity,
    smoothness_term,
    step_rng,
    train,
    train_step,
)


def _style_set(seed, t=8, c=6, batch=None):
    rng = np.random.default_rng(seed)
    shape = (t, 1, c) if batch is None else (batch, t, 1, c)
    return StyleFeatureSet(
        {lv: {p: Tensor(rng.normal(size=shape)) for p in PARTS} for lv in (1, 2, 3)}
    )


class ScriptedRng:
    def __init__(self, randoms, ints=(), choices=()):
        self.randoms = list(randoms)
        self.ints = list(ints)
        self.choices = list(choices)

    def random(self):
        return self.randoms.pop(0)

    def integers(self, lo, hi):
        return self.ints.pop(0)

    def choice(self, n, size, replace):
        return np.array(self.choices.pop(0))


# -- style mixing --------------------------------------------------------------


def test_mix_else_branch_keeps_all_target_parts():
    src, tar = _style_set(0), _style_set(1)
    out = mix_styles(src, tar, ScriptedRng(randoms=[0.9]), mix_prob=0.5)
    for lv in (1, 2, 3):
        for p in PARTS:
            assert out.levels[lv][p].data.tobytes() == tar.levels[lv][p].data.tobytes()


def test_mix_full_switch_takes_all_source_parts():
    src, tar = _style_set(2), _style_set(3)
    rng = ScriptedRng(randoms=[0.1], ints=[5], choices=[[0, 1, 2, 3, 4]])
    out = mix_styles(src, tar, rng, mix_prob=0.5)
    for lv in (1, 2, 3):
        for p in PARTS:
            assert out.levels[lv][p].data.tobytes() == src.levels[lv][p].data.tobytes()


def test_mix_two_parts_from_source_bitwise():
    src, tar = _style_set(4), _style_set(5)
    picked = [PARTS.index("LL"), PARTS.index("RA")]
    rng = ScriptedRng(randoms=[0.2], ints=[2], choices=[picked])
    out = mix_styles(src, tar, rng, mix_prob=0.5)
    for lv in (1, 2, 3):
        for p in PARTS:
            want = src if p in ("LL", "RA") else tar
            assert out.levels[lv][p].data.tobytes() == want.levels[lv][p].data.tobytes()


def test_mix_marginal_distribution():
    rng = np.random.default_rng(123)
    draws = np.stack([draw_switch_mask(rng, 0.5) for _ in range(10_000)])
    all_target = (~draws.any(axis=1)).mean()
    assert abs(all_target - 0.5) < 0.02
    mixing = draws[draws.any(axis=1)]
    per_part = mixing.mean(axis=0)
    assert np.abs(per_part - 0.6).max() < 0.02


def test_mix_batched_uses_one_mask_per_sample():
    src, tar = _style_set(6, batch=4), _style_set(7, batch=4)
    out = mix_styles(src, tar, np.random.default_rng(0), mix_prob=0.5)
    for lv in (1, 2, 3):
        for p in PARTS:
            blended = out.levels[lv][p].data
            s, t = src.levels[lv][p].data, tar.levels[lv][p].data
            for b in range(4):
                row = blended[b]
                assert np.array_equal(row, s[b]) or np.array_equal(row, t[b])


# -- loss terms ----------------------------------------------------------------


class IdentityStub:
    """encode/decode chain that reproduces its input exactly."""

    offset = 0.0

    def encode_style(self, x):
        part = ad.take(x, np.array([0]), axis=-2)
        return StyleFeatureSet({lv: {p: part for p in PARTS} for lv in (1, 2, 3)})

    def encode_content(self, x):
        return x

    def decode(self, f_c, styles, **kwargs):
        if self.offset:
            return ad.add(f_c, Tensor(np.asarray(self.offset, dtype=f_c.dtype)))
        return f_c


def _pair(seed, t=6):
    rng = np.random.default_rng(seed)
    return Tensor(rng.normal(size=(t, 21, 15))), Tensor(rng.normal(size=(t, 21, 15)))


def test_identity_model_has_zero_losses():
    x_src, x_tar = _pair(0)
    out = compute_losses(IdentityStub(), x_src, x_tar, TrainConfig(), np.random.default_rng(0))
    assert out.report.l_rec == 0.0
    assert out.report.l_cyc == 0.0
    assert out.report.l_root == 0.0
    assert out.report.l_sm == 0.0


def test_constant_offset_gives_two_c_reconstruction():
    stub = IdentityStub()
    stub.offset = 0.25
    x_src, x_tar = _pair(1)
    out = compute_losses(stub, x_src, x_tar, TrainConfig(), np.random.default_rng(0))
    np.testing.assert_allclose(out.report.l_rec, 0.5, atol=1e-12)
    np.testing.assert_allclose(out.report.l_sm, 0.0, atol=1e-12)  # offsets vanish in differences


def test_root_loss_reduction_arithmetic():
    t = 10
    a = np.zeros((t, 21, 15))
    b = a.copy()
    b[:, :, 13] += 0.01  # forward root channel offset
    loss = l1_mean(root_velocity(Tensor(a)), root_velocity(Tensor(b)))
    np.testing.assert_allclose(loss.item(), 0.01 / 3, atol=1e-12)


def test_root_loss_ignores_non_root_channels():
    rng = np.random.default_rng(2)
    a = rng.normal(size=(8, 21, 15))
    b = a.copy()
    b[:, :, 0:12] = rng.normal(size=(8, 21, 12))  # perturb everything but the root track
    va = root_velocity(Tensor(a))
    vb = root_velocity(Tensor(b))
    assert np.array_equal(va.data, vb.data)


def test_smoothness_of_linear_ramp():
    t = 12
    base = np.random.default_rng(3).normal(size=(t, 21, 15))
    slope = 0.07
    ramp = base + slope * np.arange(t)[:, None, None]
    loss = smoothness_term(Tensor(ramp), Tensor(base))
    np.testing.assert_allclose(loss.item(), slope, atol=1e-9)


def test_smoothness_ignores_frame_constant_noise():
    base = np.random.default_rng(4).normal(size=(9, 21, 15))
    noisy = base + np.random.default_rng(5).normal(size=(1, 21, 15))
    loss = smoothness_term(Tensor(noisy), Tensor(base))
    np.testing.assert_allclose(loss.item(), 0.0, atol=1e-12)


def test_frame_differences_shape():
    v = frame_differences(Tensor(np.zeros((9, 21, 15))))
    assert v.shape == (8, 21, 15)


def test_total_is_weighted_sum_identity():
    stub = IdentityStub()
    stub.offset = 0.1
    x_src, x_tar = _pair(6)
    cfg = TrainConfig(lambda_cyc=0.7, lambda_root=2.5, lambda_sm=0.3)
    out = compute_losses(stub, x_src, x_tar, cfg, np.random.default_rng(1))
    r = out.report
    expected = r.l_rec + cfg.lambda_cyc * r.l_cyc + cfg.lambda_root * r.l_root + cfg.lambda_sm * r.l_sm
    assert abs(r.total - expected) < 1e-9


def test_zero_cycle_weight_skips_term():
    stub = IdentityStub()
    stub.offset = 0.1
    x_src, x_tar = _pair(7)
    cfg = TrainConfig(lambda_cyc=0.0)
    out = compute_losses(stub, x_src, x_tar, cfg, np.random.default_rng(1))
    assert out.report.l_cyc == 0.0
    expected = out.report.l_rec + cfg.lambda_root * out.report.l_root + cfg.lambda_sm * out.report.l_sm
    assert abs(out.report.total - expected) < 1e-9


def test_loss_gradients_on_tiny_network():
    # full objective (all four terms) differentiated through one small
    # parameter tensor; the per-layer and end-to-end input checks live in the
    # acceptance suite
    net = StyleTransferNet.create(tiny_config(4), seed=2)
    cfg = TrainConfig()
    x_src = Tensor(np.random.default_rng(8).normal(size=(4, 21, 15)) * 0.3)
    x_tar = Tensor(np.random.default_rng(9).normal(size=(4, 21, 15)) * 0.3)
    holder = net.params.param("dec.out.b")
    original = holder.tensor

    def f(x):
        holder.tensor = x
        try:
            return compute_losses(net, x_src, x_tar, cfg, np.random.default_rng(10)).total
        finally:
            holder.tensor = original

    err = ad.grad_check(f, original.data.copy())
    assert err < 1e-4


# -- optimizer and averaging -----------------------------------------------------


def _quadratic_params():
    from mostyle.network import ModelParams

    params = ModelParams()
    params.add("w", np.array([5.0, -3.0]))
    return params


def test_rectified_warmup_minimizes_quadratic():
    params = _quadratic_params()
    opt = RectifiedAdam(params, lr=0.05, betas=(0.0, 0.99), rectified=True)
    for _ in range(300):
        w = params["w"]
        loss = ad.mean_all(ad.mul(w, w))
        params.zero_grads()
        ad.backward(loss)
        opt.step()
    assert np.abs(params["w"].data).max() < 0.05


def test_plain_adaptive_mode_minimizes_quadratic():
    params = _quadratic_params()
    opt = RectifiedAdam(params, lr=0.05, betas=(0.0, 0.99), rectified=False)
    for _ in range(300):
        w = params["w"]
        loss = ad.mean_all(ad.mul(w, w))
        params.zero_grads()
        ad.backward(loss)
        opt.step()
    assert np.abs(params["w"].data).max() < 0.05


def test_ema_contracts_toward_frozen_parameters():
    params = _quadratic_params()
    ema = EmaState(params, decay=0.9)
    ema.shadow["w"] = params["w"].data + 1.0  # initial gap of exactly 1
    for k in range(1, 20):
        ema.update(params)
        gap = np.abs(ema.shadow["w"] - params["w"].data).max()
        assert gap <= 0.9**k + 1e-12


def test_report_csv_round_trip():
    r = LossReport(step=3, l_rec=0.5, l_cyc=0.25, l_root=0.1, l_sm=0.05, total=0.9, wall_ms=12.0)
    row = r.csv_row()
    assert row.startswith("3,0.5,0.25,0.1,0.05,")
    assert LossReport.CSV_HEADER.count(",") == row.count(",")


def test_nonfinite_loss_aborts_with_term_name():
    net = StyleTransferNet.create(tiny_config(4), seed=4)
    net.params.param("dec.out.w").data = np.full_like(net.params["dec.out.w"].data, np.nan)
    x_src, x_tar = _pair(11, t=4)
    with pytest.raises(NumericAbort, match="l_rec"):
        compute_losses(net, x_src, x_tar, TrainConfig(), np.random.default_rng(0))


# -- the loop -------------------------------------------------------------------


@pytest.fixture(scope="module")
def small_archive(tmp_path_factory):
    root = tmp_path_factory.mktemp("arch")
    archive = build_synthetic_archive(root, n_clips=4, frames=24, seed=1)
    stats = FeatureStats.compute(archive.clips())
    return archive, stats


def _loop_config(steps=3, **kw):
    base = dict(
        batch_size=2,
        steps=steps,
        lr=1e-3,
        dtype="float32",
        checkpoint_every=0,
        seed=7,
    )
    base.update(kw)
    return TrainConfig(**base)


def test_two_runs_identical_seeds_bitwise(small_archive, tmp_path):
    archive, stats = small_archive

    def run(out):
        net = StyleTransferNet.create(tiny_config(4), seed=7)
        cfg = _loop_config()
        return train(net, archive, stats, cfg, tmp_path / out)

    ra = run("a")
    rb = run("b")
    for a, b in zip(ra, rb):
        assert (a.l_rec, a.l_cyc, a.l_root, a.l_sm, a.total) == (b.l_rec, b.l_cyc, b.l_root, b.l_sm, b.total)


def test_resume_reproduces_uninterrupted_run(small_archive, tmp_path):
    archive, stats = small_archive

    net_full = StyleTransferNet.create(tiny_config(4), seed=7)
    full = train(net_full, archive, stats, _loop_config(steps=4), tmp_path / "full")

    cfg_half = _loop_config(steps=2, checkpoint_every=2)
    net_half = StyleTransferNet.create(tiny_config(4), seed=7)
    train(net_half, archive, stats, cfg_half, tmp_path / "half")

    from mostyle.training import resume_state

    net_resumed = StyleTransferNet.create(tiny_config(4), seed=7)
    cfg_rest = _loop_config(steps=4)
    optimizer, ema, start, stats2 = resume_state(tmp_path / "half" / "ckpt_000002.mpck", net_resumed, cfg_rest)
    assert start == 2
    rest = train(
        net_resumed, archive, stats2, cfg_rest, tmp_path / "rest", start_step=start, optimizer=optimizer, ema=ema
    )
    for a, b in zip(full[2:], rest):
        assert (a.step, a.l_rec, a.l_cyc, a.l_root, a.l_sm, a.total) == (b.step, b.l_rec, b.l_cyc, b.l_root, b.l_sm, b.total)


def test_crop_rate_config_contract(small_archive):
    archive, stats = small_archive
    raw = {stats.normalize(c.features).astype(np.float32).tobytes() for c in archive.clips()}
    rng = np.random.default_rng(0)
    crops = 0
    n = 400
    for _ in range(n):
        src, tar = sample_pair_batch(archive, stats, 1, rng, crop_rate=0.2, dtype=np.float32)
        crops += src[0].tobytes() not in raw
        crops += tar[0].tobytes() not in raw
    frac = crops / (2 * n)
    assert abs(frac - 0.2) < 0.04


def test_loss_report_identity_in_real_steps(small_archive):
    archive, stats = small_archive
    net = StyleTransferNet.create(tiny_config(4), seed=3)
    net.params.astype(np.float32)
    cfg = _loop_config(steps=2, lambda_cyc=0.4, lambda_root=1.3, lambda_sm=0.6)
    opt = RectifiedAdam(net.params, cfg.lr, cfg.betas)
    ema = EmaState(net.params, cfg.ema_decay)
    for step in range(2):
        rng = step_rng(cfg.seed, step)
        batch = sample_pair_batch(archive, stats, cfg.batch_size, rng, cfg.crop_rate, dtype=np.float32)
        rep = train_step(net, batch, opt, ema, cfg, rng, step=step)
        expected = rep.l_rec + cfg.lambda_cyc * rep.l_cyc + cfg.lambda_root * rep.l_root + cfg.lambda_sm * rep.l_sm
        assert abs(rep.total - expected) < 1e-9


def test_smoothness_printed_form_flag(small_archive):
    archive, stats = small_archive
    x_src, x_tar = _pair(12, t=8)
    net = StyleTransferNet.create(tiny_config(4), seed=5)
    a = compute_losses(net, x_src, x_tar, TrainConfig(smoothness_printed_form=False), np.random.default_rng(3))
    b = compute_losses(net, x_src, x_tar, TrainConfig(smoothness_printed_form=True), np.random.default_rng(3))
    assert a.report.l_sm != b.report.l_sm  # pairing differs, same inputs

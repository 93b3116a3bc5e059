import numpy as np
import pytest

from mostyle import autodiff as ad
from mostyle.autodiff import Tensor
from mostyle.network import (
    ModelConfig,
    ModelParams,
    StyleFeatureSet,
    StyleTransferNet,
    adain,
    atn,
    bp_adain,
    bp_atn,
    bp_stylenet,
    init_params,
    split_by_part,
    tiny_config,
)
from mostyle.skeleton import PARTS

NET8 = StyleTransferNet.create(tiny_config(8), seed=0)


def _input(t, seed=0):
    return Tensor(np.random.default_rng(seed).normal(size=(t, 21, 15)))


# -- shape ladders ------------------------------------------------------------


@pytest.mark.parametrize("t", [4, 8, 120])
def test_style_encoder_shape_ladder(t):
    c1, c2, c3 = NET8.cfg.channels
    styles = NET8.encode_style(_input(t))
    for level, (frames, channels) in ((1, (t, c1)), (2, (t // 2, c2)), (3, (t // 4, c3))):
        total_vertices = 0
        for p in PARTS:
            feat = styles.levels[level][p]
            assert feat.shape[0] == frames
            assert feat.shape[2] == channels
            total_vertices += feat.shape[1]
        assert total_vertices == (21, 10, 5)[level - 1]


@pytest.mark.parametrize("t", [4, 8, 120])
def test_content_encoder_shape_ladder(t):
    out = NET8.encode_content(_input(t))
    assert out.shape == (t // 4, 5, NET8.cfg.channels[2])


def test_frame_count_must_divide_four():
    with pytest.raises(ad.DimensionError, match="edge-pad"):
        NET8.encode_style(_input(10))
    with pytest.raises(ad.DimensionError, match="edge-pad"):
        NET8.encode_content(_input(10))


def test_decode_round_trip_shape():
    x = _input(8)
    out = NET8.decode(NET8.encode_content(x), NET8.encode_style(x))
    assert out.shape == (8, 21, 15)


def test_batched_shapes():
    x = Tensor(np.random.default_rng(1).normal(size=(3, 8, 21, 15)))
    styles = NET8.encode_style(x)
    assert styles.levels[3]["SP"].shape == (3, 2, 1, NET8.cfg.channels[2])
    content = NET8.encode_content(x)
    assert content.shape == (3, 2, 5, NET8.cfg.channels[2])
    out = NET8.decode(content, styles)
    assert out.shape == (3, 8, 21, 15)


# -- encoder properties -------------------------------------------------------


def test_style_encoder_keeps_statistics():
    # no normalization inside: shifting input channels changes the features
    x = _input(8, seed=2)
    shifted = Tensor(x.data + np.linspace(-1, 1, 15))
    fa = NET8.encode_style(x)
    fb = NET8.encode_style(shifted)
    diff = max(
        np.abs(fa.levels[lv][p].data - fb.levels[lv][p].data).max() for lv in (1, 2, 3) for p in PARTS
    )
    assert diff > 1e-6


def test_instance_norm_site_ignores_channel_affine():
    # variance well above the normalization epsilon, per the invariance claim
    x = Tensor(_input(8, seed=3).data * 10.0)
    p = NET8.params
    h = ad.linear(x, p["content_enc.stem.w"], p["content_enc.stem.b"])
    scale = Tensor(np.random.default_rng(4).uniform(0.5, 2.0, size=h.shape[-1]))
    shift = Tensor(np.random.default_rng(5).normal(size=h.shape[-1]))
    a = ad.instance_norm(h, axes=(-3, -2))
    b = ad.instance_norm(ad.add(ad.mul(h, scale), shift), axes=(-3, -2))
    assert np.abs(a.data - b.data).max() < 1e-5


def test_content_feature_constant_for_frozen_pose():
    pose = np.random.default_rng(6).normal(size=(1, 21, 15))
    x = Tensor(np.repeat(pose, 16, axis=0))
    out = NET8.encode_content(x)
    assert np.abs(out.data - out.data[:1]).max() < 1e-6


# -- part composition ---------------------------------------------------------


def test_compose_all_parts_from_one_motion_is_identity():
    styles = NET8.encode_style(_input(8, seed=7))
    composed = StyleFeatureSet.compose({p: styles for p in PARTS})
    for lv in (1, 2, 3):
        for p in PARTS:
            assert composed.levels[lv][p] is styles.levels[lv][p]


def test_compose_selects_bitwise_per_part():
    sa = NET8.encode_style(_input(8, seed=8))
    sb = NET8.encode_style(_input(8, seed=9))
    assignment = {p: (sa if p in ("LL", "RL") else sb) for p in PARTS}
    out = StyleFeatureSet.compose(assignment)
    for lv in (1, 2, 3):
        for p in ("LL", "RL"):
            assert out.levels[lv][p].data.tobytes() == sa.levels[lv][p].data.tobytes()
        for p in ("SP", "LA", "RA"):
            assert out.levels[lv][p].data.tobytes() == sb.levels[lv][p].data.tobytes()


def test_compose_three_motion_split():
    legs = NET8.encode_style(_input(8, seed=10))
    spine = NET8.encode_style(_input(12, seed=11))
    arms = NET8.encode_style(_input(8, seed=12))
    out = StyleFeatureSet.compose({"LL": legs, "RL": legs, "SP": spine, "LA": arms, "RA": arms})
    assert out.levels[1]["SP"].shape[0] == 12  # part features keep their own lengths
    assert out.levels[1]["LL"].data.tobytes() == legs.levels[1]["LL"].data.tobytes()
    assert out.levels[1]["RA"].data.tobytes() == arms.levels[1]["RA"].data.tobytes()


def test_compose_requires_all_parts():
    styles = NET8.encode_style(_input(8, seed=13))
    with pytest.raises(ad.ContractError, match="unassigned"):
        StyleFeatureSet.compose({"LL": styles})


# -- adain ---------------------------------------------------------------------


def _gen_params(c, gamma, beta):
    w = Tensor(np.zeros((c, 2 * c)))
    b = Tensor(np.concatenate([np.full(c, gamma), np.full(c, beta)]))
    return w, b


def test_adain_identity_generator_is_instance_norm():
    rng = np.random.default_rng(14)
    f_d = Tensor(rng.normal(size=(6, 4, 8)))
    f_s = Tensor(rng.normal(size=(9, 4, 8)))
    w, b = _gen_params(8, 1.0, 0.0)
    out = adain(f_d, f_s, w, b)
    expected = ad.instance_norm(f_d, axes=(-3, -2))
    np.testing.assert_array_equal(out.data, expected.data)


def test_adain_imposes_requested_statistics():
    rng = np.random.default_rng(15)
    f_d = Tensor(rng.normal(loc=5.0, scale=3.0, size=(40, 5, 6)))
    f_s = Tensor(rng.normal(size=(7, 5, 6)))
    w, b = _gen_params(6, 2.0, 3.0)
    out = adain(f_d, f_s, w, b).data
    np.testing.assert_allclose(out.mean(axis=(0, 1)), 3.0, atol=1e-5)
    np.testing.assert_allclose(out.std(axis=(0, 1)), 2.0, atol=1e-3)


def test_adain_output_statistics_ignore_input_statistics():
    rng = np.random.default_rng(16)
    f_d = Tensor(rng.normal(size=(30, 4, 6)))
    f_s = Tensor(rng.normal(size=(8, 4, 6)))
    w = Tensor(rng.normal(size=(6, 12)) * 0.3)
    b = Tensor(rng.normal(size=12))
    out_a = adain(f_d, f_s, w, b).data
    out_b = adain(Tensor(5.0 * f_d.data + 1.0), f_s, w, b).data
    assert np.abs(out_a.mean(axis=(0, 1)) - out_b.mean(axis=(0, 1))).max() < 1e-3
    assert np.abs(out_a.std(axis=(0, 1)) - out_b.std(axis=(0, 1))).max() < 1e-3


def test_adain_channel_mismatch_raises():
    with pytest.raises(ad.DimensionError):
        adain(Tensor(np.zeros((4, 2, 6))), Tensor(np.zeros((4, 2, 8))), *_gen_params(6, 1, 0))


def _level_styles(net, level_idx, seed, channels=None):
    level = net.level(level_idx)
    c = channels or net.cfg.level_channels(level_idx)
    rng = np.random.default_rng(seed)
    return {
        p: Tensor(rng.normal(size=(6, len(level.part_vertices[p]), c))) for p in PARTS
    }


def test_bp_adain_per_part_locality():
    for level_idx in (1, 2, 3):
        level = NET8.level(level_idx)
        c = NET8.cfg.level_channels(level_idx)
        f_d = Tensor(np.random.default_rng(17).normal(size=(4, level.n_vertices, c)))
        styles = _level_styles(NET8, level_idx, seed=18)
        base = bp_adain(f_d, styles, NET8.params, f"dec.net{level_idx}.ada", level).data
        for part in PARTS:
            perturbed = dict(styles)
            perturbed[part] = Tensor(styles[part].data + 1.7)
            out = bp_adain(f_d, perturbed, NET8.params, f"dec.net{level_idx}.ada", level).data
            for v, lbl in enumerate(level.part_labels):
                if lbl != part:
                    assert np.array_equal(out[:, v, :], base[:, v, :])


def test_bp_adain_differs_from_whole_body_adain():
    rng = np.random.default_rng(19)
    level = NET8.level(1)
    c = NET8.cfg.channels[0]
    f_d = Tensor(rng.normal(size=(4, 21, c)))
    shared_style = Tensor(rng.normal(size=(6, 21, c)))
    styles = {p: ad.take(shared_style, np.array(level.part_vertices[p]), axis=-2) for p in PARTS}
    w, b = _gen_params(c, 2.0, 0.5)
    params = ModelParams()
    for p in PARTS:
        params.add(f"ada.{p}.w", w.data)
        params.add(f"ada.{p}.b", b.data)
    per_part = bp_adain(f_d, styles, params, "ada", level).data
    whole = adain(f_d, shared_style, w, b).data
    assert np.abs(per_part - whole).max() > 1e-3


def test_bp_adain_at_coarsest_level_normalizes_over_frames():
    # one vertex per part: the per-channel statistics come from frames alone
    level = NET8.level(3)
    c = NET8.cfg.channels[2]
    rng = np.random.default_rng(20)
    f_d = Tensor(rng.normal(size=(8, 5, c)))
    styles = _level_styles(NET8, 3, seed=21)
    out = bp_adain(f_d, styles, NET8.params, "dec.net3.ada", level, nullify=True).data
    for v in range(5):
        np.testing.assert_allclose(out[:, v, :].mean(axis=0), 0.0, atol=1e-10)


# -- attention ----------------------------------------------------------------


def _atn_params(c, seed=0, tied=False, identity=False):
    rng = np.random.default_rng(seed)
    params = ModelParams()
    for name in ("m", "n", "l", "out"):
        if identity and name in ("m", "n"):
            w = np.eye(c)
        elif tied and name == "n":
            w = params.param("atn.m.w").data.copy()
        else:
            w = rng.normal(size=(c, c)) / np.sqrt(c)
        params.add(f"atn.{name}.w", w)
        params.add(f"atn.{name}.b", np.zeros(c))
    return params


def test_atn_singleton_style_extent():
    c = 6
    rng = np.random.default_rng(22)
    params = _atn_params(c, seed=23)
    f_hat = Tensor(rng.normal(size=(4, 2, c)))
    f_s = Tensor(rng.normal(size=(1, 1, c)))
    sink = []
    out = atn(f_hat, f_s, params, "atn", sink=sink, sink_key=None)
    attention = sink[0][1]
    np.testing.assert_allclose(attention, 1.0, atol=1e-12)  # softmax of a singleton
    ls = f_s.data.reshape(1, c) @ params.param("atn.l.w").data
    proj = ls @ params.param("atn.out.w").data
    np.testing.assert_allclose(out.data, f_hat.data + proj.reshape(1, 1, c), atol=1e-9)


def test_atn_constant_maps_give_uniform_attention():
    c = 5
    rng = np.random.default_rng(24)
    params = _atn_params(c, seed=25)
    params.param("atn.m.w").data = np.zeros((c, c))
    params.param("atn.n.w").data = np.zeros((c, c))
    f_hat = Tensor(rng.normal(size=(3, 2, c)))
    f_s = Tensor(rng.normal(size=(4, 2, c)))
    sink = []
    atn(f_hat, f_s, params, "atn", sink=sink, sink_key=None)
    attention = sink[0][1]
    np.testing.assert_allclose(attention, 1.0 / 8, atol=1e-12)  # style extent 4*2


def test_atn_matches_brute_force_softmax():
    c = 4
    rng = np.random.default_rng(26)
    params = _atn_params(c, seed=27)
    f_hat = Tensor(rng.normal(size=(2, 1, c)))  # content extent 2
    f_s = Tensor(rng.normal(size=(3, 1, c)))  # style extent 3
    sink = []
    out = atn(f_hat, f_s, params, "atn", sink=sink, sink_key=None)
    attention = sink[0][1]

    def channel_norm(x):
        mean = x.mean(axis=(0, 1), keepdims=True)
        var = x.var(axis=(0, 1), keepdims=True)
        return (x - mean) / np.sqrt(var + 1e-5)

    ms = channel_norm(f_s.data).reshape(3, c) @ params.param("atn.m.w").data
    nd = channel_norm(f_hat.data).reshape(2, c) @ params.param("atn.n.w").data
    logits = ms @ nd.T  # (3, 2)
    expected = np.exp(logits - logits.max(axis=0)) / np.exp(logits - logits.max(axis=0)).sum(axis=0)
    np.testing.assert_allclose(attention, expected, atol=1e-9)

    ls = f_s.data.reshape(3, c) @ params.param("atn.l.w").data
    expected_out = f_hat.data + (expected.T @ ls @ params.param("atn.out.w").data).reshape(2, 1, c)
    np.testing.assert_allclose(out.data, expected_out, atol=1e-9)


def test_atn_columns_sum_to_one():
    c = 6
    params = _atn_params(c, seed=28)
    rng = np.random.default_rng(29)
    f_hat = Tensor(rng.normal(size=(5, 3, c)))
    f_s = Tensor(rng.normal(size=(7, 3, c)))
    sink = []
    atn(f_hat, f_s, params, "atn", sink=sink, sink_key=None)
    attention = sink[0][1]
    np.testing.assert_allclose(attention.sum(axis=0), 1.0, atol=1e-9)
    assert (attention >= 0).all()


def test_atn_tied_maps_on_equal_norm_features_prefer_diagonal():
    # +-1 design: channel-normalized positions keep equal norms, so with
    # m = n = identity the Gram diagonal is each column's strict max
    c = 8
    params = _atn_params(c, identity=True)
    signs = np.array(
        [[1, 1, 1, 1, 1, 1, 1, 1], [1, -1, 1, -1, 1, -1, 1, -1], [1, 1, -1, -1, 1, 1, -1, -1], [1, -1, -1, 1, 1, -1, -1, 1]],
        dtype=float,
    )
    feats = Tensor(signs.reshape(4, 1, c))
    sink = []
    atn(feats, feats, params, "atn", sink=sink, sink_key=None)
    attention = sink[0][1]
    assert (attention.argmax(axis=0) == np.arange(4)).all()


def test_atn_zero_style_projection_is_passthrough():
    c = 5
    params = _atn_params(c, seed=30)
    params.param("atn.l.w").data = np.zeros((c, c))
    rng = np.random.default_rng(31)
    f_hat = Tensor(rng.normal(size=(4, 2, c)))
    f_s = Tensor(rng.normal(size=(6, 2, c)))
    out = atn(f_hat, f_s, params, "atn")
    np.testing.assert_allclose(out.data, f_hat.data, atol=1e-12)


def test_bp_atn_per_part_locality():
    level = NET8.level(2)
    c = NET8.cfg.channels[1]
    rng = np.random.default_rng(32)
    f_hat = Tensor(rng.normal(size=(4, 10, c)))
    styles = _level_styles(NET8, 2, seed=33)
    base = bp_atn(f_hat, styles, NET8.params, "dec.net2.atn", level, NET8.cfg).data
    perturbed = dict(styles)
    perturbed["RA"] = Tensor(styles["RA"].data * 2.0 + 0.3)
    out = bp_atn(f_hat, perturbed, NET8.params, "dec.net2.atn", level, NET8.cfg).data
    for v, lbl in enumerate(level.part_labels):
        if lbl != "RA":
            assert np.array_equal(out[:, v, :], base[:, v, :])
    assert not np.array_equal(out, base)


# -- the full style block and decoder ------------------------------------------


def test_stylenet_halves_channels():
    level = NET8.level(2)
    c2 = NET8.cfg.channels[1]
    rng = np.random.default_rng(34)
    f_d = Tensor(rng.normal(size=(4, 10, c2)))
    styles = _level_styles(NET8, 2, seed=35)
    out = bp_stylenet(f_d, styles, NET8.params, "dec.net2", level, NET8.cfg)
    assert out.shape == (4, 10, NET8.cfg.channels[0])


def test_stylenet_gradient_check():
    net = StyleTransferNet.create(tiny_config(4), seed=1)
    level = net.level(3)
    styles = _level_styles(net, 3, seed=36, channels=net.cfg.channels[2])
    probe = Tensor(np.random.default_rng(37).normal(size=(4, 5, net.cfg.channels[1])))

    def f(x):
        out = bp_stylenet(x, styles, net.params, "dec.net3", level, net.cfg)
        return ad.mean_all(ad.mul(out, probe))

    err = ad.grad_check(f, np.random.default_rng(38).normal(size=(4, 5, net.cfg.channels[2])))
    assert err < 1e-4


def test_self_stylization_is_deterministic_function_of_content():
    x = _input(8, seed=39)
    out1 = NET8.decode(NET8.encode_content(x), NET8.encode_style(x))
    out2 = NET8.decode(NET8.encode_content(x), NET8.encode_style(x))
    assert out1.data.tobytes() == out2.data.tobytes()


def test_nullified_style_path_depends_only_on_content():
    x = _input(8, seed=40)
    content = NET8.encode_content(x)
    styles_a = NET8.encode_style(_input(8, seed=41))
    styles_b = NET8.encode_style(_input(12, seed=42))
    out_a = NET8.decode(content, styles_a, nullify_style=True)
    out_b = NET8.decode(content, styles_b, nullify_style=True)
    assert out_a.data.tobytes() == out_b.data.tobytes()


def test_adain_generators_start_at_identity_statistics():
    x = _input(8, seed=43)
    level = NET8.level(3)
    f_d = Tensor(np.random.default_rng(44).normal(size=(2, 5, NET8.cfg.channels[2])))
    styles = _level_styles(NET8, 3, seed=45)
    with_style = bp_adain(f_d, styles, NET8.params, "dec.net3.ada", level)
    nullified = bp_adain(f_d, styles, NET8.params, "dec.net3.ada", level, nullify=True)
    np.testing.assert_array_equal(with_style.data, nullified.data)


# -- parameters ----------------------------------------------------------------


def test_init_is_deterministic():
    a = init_params(tiny_config(8), np.random.default_rng(5))
    b = init_params(tiny_config(8), np.random.default_rng(5))
    assert a.names() == b.names()
    for name in a.names():
        assert a[name].data.tobytes() == b[name].data.tobytes()


def test_parameter_count_locked():
    assert NET8.params.count() == 113535
    assert StyleTransferNet.create(tiny_config(8), seed=3).params.count() == 113535


def test_duplicate_parameter_names_rejected():
    params = ModelParams()
    params.add("w", np.zeros(3))
    with pytest.raises(ValueError, match="duplicate"):
        params.add("w", np.zeros(3))


def test_per_part_attention_config():
    cfg = ModelConfig(channels=(8, 16, 32), per_part_attention=True)
    net = StyleTransferNet.create(cfg, seed=0)
    assert "dec.net1.atn.LL.m.w" in net.params
    x = _input(8, seed=46)
    out = net.decode(net.encode_content(x), net.encode_style(x))
    assert out.shape == (8, 21, 15)

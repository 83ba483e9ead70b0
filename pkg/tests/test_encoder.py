import numpy as np
import pytest

from duotask import tensor as T
from duotask.encoder import (Encoder, EncoderConfig, FeatureCache, apply_masking,
                             expand_mask_starts, tap)
from duotask.seeds import derive_rng


def toy_cfg(**kw):
    base = dict(conv_channels=(8, 8, 16, 16), dim=16, n_layers=2, n_heads=2,
                ffn_dim=32, dropout=0.0, layerdrop=0.0, time_mask_prob=0.0,
                feature_mask_prob=0.0, pos_kernel=7, pos_groups=2)
    base.update(kw)
    return EncoderConfig(**base)


def make_encoder(cfg=None, seed=0):
    return Encoder(cfg or toy_cfg(), derive_rng(seed, "enc"))


def test_frame_count_2s_and_10s():
    enc = make_encoder()
    assert enc.extractor.n_frames(32000) == 100
    assert enc.extractor.n_frames(160000) == 500


def test_config_rejects_bad_stride_product():
    with pytest.raises(ValueError, match="stride"):
        toy_cfg(conv_strides=(5, 4, 4, 3))


def test_config_rejects_indivisible_heads():
    with pytest.raises(ValueError, match="heads"):
        toy_cfg(dim=15)


def test_zero_input_is_finite():
    enc = make_encoder()
    out = enc.encode(np.zeros((1, 32000)), [32000])
    for layer in out.layers:
        assert np.isfinite(layer.data).all()


def test_input_shorter_than_receptive_field_errors():
    enc = make_encoder()
    with pytest.raises(ValueError, match="receptive field"):
        enc.encode(np.zeros((1, 3)), [3])


def test_encode_shapes_and_layer_count():
    enc = make_encoder()
    out = enc.encode(np.zeros((1, 32000)), [32000])
    assert len(out.layers) == 3
    for layer in out.layers:
        assert layer.shape == (1, 100, 16)
    assert out.valid.shape == (1, 100) and out.valid.all()


def test_masking_eval_mode_is_identity():
    enc = make_encoder(toy_cfg(time_mask_prob=0.5, feature_mask_prob=0.5,
                               time_mask_span=3, feature_mask_span=2))
    x = np.random.default_rng(0).normal(size=(1, 16000))
    a = enc.encode(x, [16000]).layers[0].data
    b = enc.encode(x, [16000]).layers[0].data
    assert np.array_equal(a, b)


def test_masking_prob_zero_identity():
    cfg = toy_cfg()
    frames = T.Tensor(np.random.default_rng(1).normal(size=(2, 9, 16)))
    emb = T.parameter(np.zeros(16))
    out = apply_masking(frames, emb, cfg, derive_rng(0, "m"))
    assert np.array_equal(out.data, frames.data)


def test_masking_saturation_all_mask_embedding():
    cfg = toy_cfg(time_mask_prob=1.0, time_mask_span=1)
    frames = T.Tensor(np.random.default_rng(2).normal(size=(2, 9, 16)))
    emb = T.parameter(np.arange(16.0))
    out = apply_masking(frames, emb, cfg, derive_rng(0, "m"))
    assert np.allclose(out.data, np.broadcast_to(np.arange(16.0), (2, 9, 16)))


def test_masking_span_too_long_errors():
    cfg = toy_cfg(time_mask_prob=0.5, time_mask_span=20)
    frames = T.Tensor(np.zeros((1, 10, 16)))
    with pytest.raises(ValueError, match="span"):
        apply_masking(frames, T.parameter(np.zeros(16)), cfg, derive_rng(0, "m"))


def test_expand_mask_starts():
    starts = np.array([[True, False, False, False, True, False]])
    out = expand_mask_starts(starts, 2)
    assert np.array_equal(out, [[True, True, False, False, True, True]])


def test_feature_mask_zeroes_channels():
    cfg = toy_cfg(feature_mask_prob=1.0, feature_mask_span=1)
    frames = T.Tensor(np.ones((1, 5, 16)))
    out = apply_masking(frames, T.parameter(np.zeros(16)), cfg, derive_rng(0, "m"))
    assert np.array_equal(out.data, np.zeros((1, 5, 16)))


def test_padding_invariance():
    enc = make_encoder()
    rng = np.random.default_rng(3)
    x = rng.normal(size=24000) * 0.2
    solo = enc.encode(x[None], [24000])
    padded_in = np.zeros((1, 40000))
    padded_in[0, :24000] = x
    padded = enc.encode(padded_in, [24000])
    m = solo.layers[-1].shape[1]
    assert padded.frame_lengths[0] == m
    for a, b in zip(solo.layers, padded.layers):
        assert np.abs(a.data[0, :m] - b.data[0, :m]).max() < 1e-9


def test_padded_frames_marked():
    enc = make_encoder()
    xs = np.zeros((2, 40000))
    out = enc.encode(xs, [40000, 24000])
    assert out.valid[0].all()
    assert out.valid[1, :out.frame_lengths[1]].all()
    assert not out.valid[1, out.frame_lengths[1]:].any()


def test_layerdrop_one_skips_all_layers():
    enc = make_encoder(toy_cfg(layerdrop=1.0))
    x = np.random.default_rng(4).normal(size=(1, 16000)) * 0.1
    out = enc.encode(x, [16000], training=True, rng=derive_rng(0, "d"))
    c0 = out.layers[0]
    with T.no_grad():
        expected = c0 + enc.pos_conv(c0, out.valid)
    assert np.array_equal(out.layers[-1].data, expected.data)
    assert np.array_equal(out.layers[1].data, out.layers[2].data)


def test_tap_boundaries():
    enc = make_encoder()
    out = enc.encode(np.zeros((1, 16000)), [16000])
    assert tap(out, enc.n_layers) is out.layers[-1]
    assert tap(out, 0) is out.layers[0]
    with pytest.raises(ValueError):
        tap(out, enc.n_layers + 1)
    with pytest.raises(ValueError):
        tap(out, -1)


def test_intermediate_layers_differ():
    enc = make_encoder()
    x = np.random.default_rng(5).normal(size=(1, 16000)) * 0.3
    out = enc.encode(x, [16000])
    mid = out.layers[enc.n_layers // 2 + enc.n_layers % 2].data
    assert not np.allclose(mid, out.layers[-1].data)


def test_eval_determinism_bitwise():
    enc = make_encoder()
    x = np.random.default_rng(6).normal(size=(2, 20000)) * 0.2
    a = enc.encode(x, [20000, 16000])
    b = enc.encode(x, [20000, 16000])
    for la, lb in zip(a.layers, b.layers):
        assert np.array_equal(la.data, lb.data)


def test_extractor_parameters_are_frozen():
    enc = make_encoder()
    for name, p in enc.named_parameters().items():
        if name.startswith("extractor."):
            assert not p.requires_grad
        else:
            assert p.requires_grad


def test_gradient_flow_through_encoder():
    enc = make_encoder()
    x = np.random.default_rng(7).normal(size=(1, 4000)) * 0.3
    params = [p for n, p in sorted(enc.named_parameters().items()) if p.requires_grad]

    def f():
        out = enc.encode(x, [4000])
        return T.tmean(T.tanh(out.layers[-1]))

    err = T.finite_diff_check(f, params, eps=1e-4)
    assert err < 1e-4


def test_feature_cache_matches_direct_extraction():
    enc = make_encoder()
    rng = np.random.default_rng(8)
    waves = [rng.normal(size=20000) * 0.1, rng.normal(size=16000) * 0.1]
    cache = FeatureCache(enc)
    frames, lens = cache.batch(["a", "b"], waves, [20000, 16000])
    again, lens2 = cache.batch(["a", "b"], waves, [20000, 16000])
    assert np.array_equal(frames, again) and np.array_equal(lens, lens2)
    direct, dlens = enc.extract_frames(waves[0][None], [20000])
    assert np.array_equal(frames[0, :lens[0]], direct[0])
    assert lens[0] == dlens[0]
    # cropped (not whole) waves are not cached
    cache.batch(["a"], [waves[0][:8000]], [20000])
    assert set(cache._frames) == {"a", "b"}


def test_base_scale_config_exists():
    cfg = EncoderConfig.base_scale()
    assert cfg.n_layers == 12 and cfg.dim == 768

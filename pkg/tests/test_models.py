import math

import numpy as np
import pytest
from scipy import ndimage

from gradcheck import check_gradients
from instacodec import tensor as T
from instacodec.models import (
    PRESETS,
    ArchConfig,
    NonFiniteError,
    blur_stack,
    build_model,
    count_decoder_macs,
    gop_plan,
    iframe_forward,
    pframe_forward,
    scale_space_warp,
)
from instacodec.models.rates import gaussian_rate_nats, logistic_rate_nats
from instacodec.models.warp import BLUR_SIGMAS, blur_matrix

LITE = PRESETS["ssf-lite"]


def closed_form_params(c, h, y, z):
    conv = lambda ci, co, k: ci * co * k * k + co
    total = 0
    for cin, cout in [(3, 3), (6, 3), (3, 3)]:
        g_a = conv(cin, c, 5) + 2 * conv(c, c, 5) + conv(c, y, 5)
        g_s = conv(y, c, 5) + 2 * conv(c, c, 5) + conv(c, cout, 5)
        h_a = conv(y, h, 3) + conv(h, h, 5) + conv(h, z, 5)
        h_s = conv(z, h, 5) + conv(h, h, 5) + conv(h, y, 3)
        prior = 2 * z
        total += g_a + g_s + h_a + 2 * h_s + prior
    return total


def receiver_closed_form(c, h, y, z):
    conv = lambda ci, co, k: ci * co * k * k + co
    g_s = conv(y, c, 5) + 2 * conv(c, c, 5) + conv(c, 3, 5)
    h_s = conv(z, h, 5) + conv(h, h, 5) + conv(h, y, 3)
    return 3 * (g_s + 2 * h_s + 2 * z)


class TestBuildModel:
    def test_param_count_closed_form(self):
        model = build_model(LITE, 0)
        total = sum(p.data.size for p in model.params.values())
        assert total == closed_form_params(*LITE.channels)
        assert model.receiver_size() == receiver_closed_form(*LITE.channels)

    def test_deterministic(self):
        a, b = build_model(LITE, 7), build_model(LITE, 7)
        assert list(a.params) == list(b.params)
        for name in a.params:
            assert np.array_equal(a.params[name].data, b.params[name].data)
        c = build_model(LITE, 8)
        assert not np.array_equal(a.params["iframe.g_a.0.weight"].data, c.params["iframe.g_a.0.weight"].data)

    def test_ssf5_receiver_size(self):
        n = build_model(PRESETS["ssf5"], 0).receiver_size()
        assert n == receiver_closed_form(*PRESETS["ssf5"].channels)
        assert abs(n / 5.0e6 - 1) <= 0.10

    def test_partition(self):
        model = build_model(LITE, 0)
        recv, send = set(model.receiver_names()), set(model.sender_names())
        assert not recv & send
        assert recv | send == set(model.params)
        assert all(n.split(".")[1] in ("g_a", "h_a") for n in send)

    def test_flow_decoder_has_three_outputs(self):
        model = build_model(LITE, 0)
        assert model.params["flow.g_s.3.weight"].shape[1] == 3

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            ArchConfig(0, 1, 1, 1)


class TestBlur:
    def test_level_zero_exact(self):
        x = T.Tensor(np.random.default_rng(0).random((1, 3, 20, 24)))
        vol = blur_stack(x, 5)
        assert np.array_equal(vol.level(0), x.data)
        assert vol.sigmas == BLUR_SIGMAS
        assert all(a < b for a, b in zip(vol.sigmas, vol.sigmas[1:]))

    def test_constant_frame(self):
        x = T.Tensor(np.full((1, 3, 16, 16), 0.37))
        vol = blur_stack(x, 5)
        np.testing.assert_allclose(vol.volume.data, 0.37, atol=1e-6)

    def test_impulse_matches_kernel(self):
        x = np.zeros((1, 1, 33, 33), np.float32)
        x[0, 0, 16, 16] = 1.0
        level1 = blur_stack(T.Tensor(x), 2).level(1)[0, 0]
        r = np.arange(-16, 17)
        g = np.exp(-0.5 * r**2)
        g[np.abs(r) > 3] = 0
        g /= g.sum()
        np.testing.assert_allclose(level1, np.outer(g, g), atol=1e-6)

    def test_reflect_padding_matches_scipy(self):
        # scipy's "mirror" mode is reflection without repeating the edge sample
        x = np.random.default_rng(1).random((1, 1, 30, 40)).astype(np.float32)
        out = blur_stack(T.Tensor(x), 3).level(2)[0, 0]
        ref = ndimage.gaussian_filter(x[0, 0].astype(np.float64), sigma=2.0, mode="mirror", truncate=3.0)
        np.testing.assert_allclose(out, ref, atol=1e-5)

    def test_small_frames_fold_repeatedly(self):
        m = blur_matrix(5, 8.0)
        np.testing.assert_allclose(m.sum(axis=1), 1.0, atol=1e-6)

    def test_rejects_single_level(self):
        with pytest.raises(ValueError):
            blur_stack(T.Tensor(np.zeros((1, 1, 4, 4))), 1)

    def test_gradient(self):
        rng = np.random.default_rng(2)
        x = rng.random((1, 2, 6, 7))
        weights = rng.random((1, 5, 2, 6, 7))
        check_gradients(lambda t: T.tensor_sum(T.mul(blur_stack(t).volume, T.Tensor(weights, dtype=np.float64))), [x])


class TestWarp:
    def test_zero_field_identity(self):
        x = T.Tensor(np.random.default_rng(0).random((2, 3, 16, 16)))
        out = scale_space_warp(x, T.Tensor(np.zeros((2, 3, 16, 16))))
        np.testing.assert_allclose(out.data, x.data, atol=1e-6)

    def test_unit_shift_on_ramp(self):
        ramp = np.tile(np.arange(16, dtype=np.float32), (16, 1))[None, None].repeat(3, axis=1)
        field = np.zeros((1, 3, 16, 16), np.float32)
        field[:, 0] = 1.0
        out = scale_space_warp(T.Tensor(ramp), T.Tensor(field)).data
        np.testing.assert_allclose(out[..., :-1], ramp[..., 1:], atol=1e-5)
        np.testing.assert_allclose(out[..., -1], ramp[..., -1], atol=1e-5)  # border clamp

    def test_pure_scale_equals_level(self):
        x = T.Tensor(np.random.default_rng(1).random((1, 3, 16, 16)))
        field = np.zeros((1, 3, 16, 16), np.float32)
        field[:, 2] = 1.0
        out = scale_space_warp(x, T.Tensor(field)).data
        np.testing.assert_allclose(out, blur_stack(x).level(1), atol=1e-6)

    def test_top_scale_clamped(self):
        x = T.Tensor(np.random.default_rng(1).random((1, 3, 16, 16)))
        field = np.zeros((1, 3, 16, 16), np.float32)
        field[:, 2] = 99.0
        out = scale_space_warp(x, T.Tensor(field)).data
        np.testing.assert_allclose(out, blur_stack(x).level(4), atol=1e-6)

    def test_wrong_channels(self):
        with pytest.raises(T.ShapeError, match="3 channels"):
            scale_space_warp(T.Tensor(np.zeros((1, 3, 8, 8))), T.Tensor(np.zeros((1, 2, 8, 8))))

    def test_gradients(self):
        rng = np.random.default_rng(3)
        frame = rng.random((1, 2, 7, 8))
        # keep every sample away from grid points and borders so the trilinear map is smooth locally
        field = np.stack(
            [rng.uniform(-1.4, 1.4, (7, 8)), rng.uniform(-1.4, 1.4, (7, 8)), rng.uniform(0.2, 3.7, (7, 8))]
        )[None]
        field = np.where(np.abs(field - np.round(field)) < 0.05, field + 0.1, field)
        field[:, 0] = np.clip(field[:, 0], -np.arange(8) + 0.1, 7 - np.arange(8) - 0.1)
        field[:, 1] = np.clip(field[:, 1], -np.arange(7)[:, None] + 0.1, 6 - np.arange(7)[:, None] - 0.1)
        weights = T.Tensor(rng.random((1, 2, 7, 8)), dtype=np.float64)
        loss = lambda f, g: T.tensor_sum(T.mul(scale_space_warp(f, g), weights))
        check_gradients(loss, [frame, field], h=1e-5)


class TestRates:
    def test_gaussian_matches_direct(self):
        from scipy import stats

        rng = np.random.default_rng(0)
        y = np.round(rng.normal(0, 3, (1, 2, 3, 3)))
        mu = rng.normal(0, 2, y.shape)
        sg = rng.uniform(0.11, 4, y.shape)
        got = gaussian_rate_nats(T.Tensor(y), T.Tensor(mu), T.Tensor(sg)).data
        p = stats.norm.cdf(y + 0.5, mu, sg) - stats.norm.cdf(y - 0.5, mu, sg)
        assert float(got) == pytest.approx(-np.log(np.maximum(p, 1e-9)).sum(), rel=1e-5)

    def test_gaussian_gradients(self):
        rng = np.random.default_rng(1)
        y = rng.normal(0, 2, (1, 2, 3, 3))
        mu = rng.normal(0, 2, y.shape)
        sg = rng.uniform(0.3, 3, y.shape)
        check_gradients(gaussian_rate_nats, [y, mu, sg], h=1e-6)

    def test_logistic_gradients(self):
        rng = np.random.default_rng(2)
        z = rng.normal(0, 2, (2, 3, 2, 2))
        loc = rng.normal(0, 1, 3)
        log_scale = rng.normal(0, 0.5, 3)
        check_gradients(logistic_rate_nats, [z, loc, log_scale], h=1e-6)

    def test_no_gradient_below_likelihood_floor(self):
        y = T.Tensor(np.array([[[[40.0]]]]), requires_grad=True, dtype=np.float64)
        mu = T.Tensor(np.zeros((1, 1, 1, 1)), requires_grad=True, dtype=np.float64)
        sg = T.Tensor(np.ones((1, 1, 1, 1)), requires_grad=True, dtype=np.float64)
        T.backward(gaussian_rate_nats(y, mu, sg))
        assert y.grad.item() == mu.grad.item() == sg.grad.item() == 0.0
        z = T.Tensor(np.array([[[[60.0]]]]), requires_grad=True, dtype=np.float64)
        loc = T.Tensor(np.zeros(1), requires_grad=True, dtype=np.float64)
        log_s = T.Tensor(np.zeros(1), requires_grad=True, dtype=np.float64)
        T.backward(logistic_rate_nats(z, loc, log_s))
        assert z.grad.item() == loc.grad.item() == log_s.grad.item() == 0.0

    def test_nonnegative(self):
        rng = np.random.default_rng(3)
        z = np.round(rng.normal(0, 5, (1, 4, 2, 2)))
        r = logistic_rate_nats(T.Tensor(z), T.Tensor(np.zeros(4)), T.Tensor(np.full(4, -3.0))).data
        assert float(r) >= 0


def random_frame(seed, size=64):
    return T.Tensor(np.random.default_rng(seed).random((1, 3, size, size)))


class TestForward:
    model = build_model(LITE, 0)

    def test_eval_deterministic(self):
        x = random_frame(0)
        a = iframe_forward(x, self.model, "eval")
        b = iframe_forward(x, self.model, "eval")
        assert np.array_equal(a.recon.data, b.recon.data)
        assert np.array_equal(a.parts["iframe"].y_symbols, b.parts["iframe"].y_symbols)
        assert a.rate_bits == b.rate_bits

    def test_shapes_and_nonnegative_rate(self):
        res = iframe_forward(random_frame(1), self.model, "eval")
        part = res.parts["iframe"]
        assert res.recon.shape == (1, 3, 64, 64)
        assert part.y_symbols.shape == (1, 48, 4, 4)
        assert part.z_symbols.shape == (1, 48, 1, 1)
        assert res.rate_bits >= 0

    def test_train_mode_uses_seed(self):
        x = random_frame(2)
        a = iframe_forward(x, self.model, "train", seed=1).rate_bits
        b = iframe_forward(x, self.model, "train", seed=1).rate_bits
        c = iframe_forward(x, self.model, "train", seed=2).rate_bits
        assert a == b and a != c

    def test_train_distortion_path_matches_eval(self):
        # ste_round forward equals hard rounding, so the reconstructions agree
        x = random_frame(3)
        assert np.array_equal(
            iframe_forward(x, self.model, "train", seed=5).recon.data, iframe_forward(x, self.model, "eval").recon.data
        )

    def test_pframe_rate_additive(self):
        res = pframe_forward(random_frame(4), random_frame(5), self.model, "eval")
        assert set(res.parts) == {"flow", "residual"}
        total = float(res.rate_nats.data) / math.log(2)
        assert total == pytest.approx(res.parts["flow"].rate_bits + res.parts["residual"].rate_bits, abs=1e-9)
        assert res.rate_bits >= 0

    def test_mismatched_reference(self):
        with pytest.raises(T.ShapeError):
            pframe_forward(random_frame(0), random_frame(1, 128), self.model)

    def test_non_finite_names_layer(self):
        bad = self.model.with_params({"iframe.g_a.1.bias": T.Tensor(np.full(32, np.nan))})
        with pytest.raises(NonFiniteError, match="iframe.g_a.1"):
            iframe_forward(random_frame(0), bad)

    def test_bad_mode(self):
        with pytest.raises(ValueError):
            iframe_forward(random_frame(0), self.model, "test")


class TestGop:
    def test_alternating(self):
        assert [e.kind for e in gop_plan(5, 2)] == list("IPIPI")

    def test_short_clip(self):
        assert [e.kind for e in gop_plan(6, 12)] == list("IPPPPP")

    def test_infinite(self):
        for gop in (math.inf, 0):
            plan = gop_plan(30, gop)
            assert [e.kind for e in plan] == ["I"] + ["P"] * 29

    def test_references(self):
        plan = gop_plan(25, 12)
        assert [e.index for e in plan if e.kind == "I"] == [0, 12, 24]
        assert all(e.reference == e.index - 1 for e in plan if e.kind == "P")

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            gop_plan(0, 12)


class TestMacs:
    def test_monotone_in_codec_channels(self):
        base = ArchConfig(32, 32, 48, 48)
        wide = ArchConfig(64, 32, 48, 48)
        assert count_decoder_macs(wide, 256, 256) > count_decoder_macs(base, 256, 256)

    def test_preset_ratio(self):
        ssf5 = count_decoder_macs(PRESETS["ssf5"], 1920, 1024)
        ssf18 = count_decoder_macs(PRESETS["ssf18"], 1920, 1024)
        assert 0.2 <= ssf5 / ssf18 <= 0.4
        assert 313.4 / 2 <= ssf18 <= 313.4 * 2

    def test_manual_layer_sum(self):
        # g_s of one autoencoder at 64x64: outputs 8, 16, 32, 64 pixels square
        c, h, y, z = LITE.channels
        g_s = 25 * (8 * 8 * y * c + 16 * 16 * c * c + 32 * 32 * c * c + 64 * 64 * c * 3)
        h_s = 2 * 25 * (2 * 2 * z * h) + 2 * 25 * (4 * 4 * h * h) + 2 * 9 * (4 * 4 * h * y)
        per_ae = g_s + h_s
        expected = (per_ae + 11 * 2 * per_ae) / 12 / (64 * 64 * 1000)
        assert count_decoder_macs(LITE, 64, 64) == pytest.approx(expected, rel=1e-12)

    def test_rejects_unaligned(self):
        with pytest.raises(ValueError):
            count_decoder_macs(LITE, 100, 64)

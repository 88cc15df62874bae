import math

import numpy as np
import pytest

from conftest import finite_difference
from skclib.encoder import (AugmentConfig, EncoderParams, augment, cluster_sampler, contrastive_step_grads,
                            ema_update, encode, encoder_from_dict, encoder_to_dict, grad_encoder, infonce_from_logits,
                            infonce_grad, infonce_loss, load_encoder, save_encoder, train_contrastive)
from skclib.errors import EmptyInputError, SizeError
from skclib.nets import TanhMLP


def set_param(net, name, v):
    out = net.copy()
    out.params[name] = v.reshape(net.params[name].shape)
    return out


class TestEncode:
    def test_zero_weights(self):
        net = TanhMLP([5, 6, 4])
        z = encode(net, np.ones(5))
        assert z.shape == (2,)
        assert np.all(z == 0)

    def test_real_and_imaginary_halves(self, rng):
        net = TanhMLP([3, 4, 6], rng)
        obs = rng.normal(size=(2, 3))
        out = net(obs)
        z = encode(net, obs)
        assert np.array_equal(z.real, out[:, :3]) and np.array_equal(z.imag, out[:, 3:])

    def test_init_shapes(self, rng):
        params = EncoderParams.init(32, 16, 4, rng)
        assert (params.d_obs, params.h, params.m) == (32, 16, 4)
        assert params.W.shape == (8, 8)
        assert params.key.distance(params.query) == 0.0


class TestAugment:
    def test_identity_without_noise(self, rng):
        obs = rng.normal(size=(4, 3))
        assert np.array_equal(augment(obs, AugmentConfig(0.0, 0.0), rng), obs)

    def test_masking_zeroes_coordinates(self, rng):
        out = augment(np.ones((200, 10)), AugmentConfig(0.0, 0.5), rng)
        frac = np.mean(out == 0)
        assert 0.4 < frac < 0.6

    def test_validation(self):
        with pytest.raises(ValueError):
            AugmentConfig(-1.0, 0.0)

        with pytest.raises(ValueError):
            AugmentConfig(0.0, 1.0)


class TestInfoNCE:
    def test_needs_negatives(self):
        with pytest.raises(EmptyInputError):
            infonce_loss(np.ones((1, 2)), np.ones((1, 2)), np.eye(2))

    def test_uniform_similarities(self):
        assert abs(infonce_loss(np.zeros((8, 4)), np.zeros((8, 4)), np.eye(4)) - math.log(8)) < 1e-12
        assert abs(math.log(8) - 2.079442) < 1e-6

    def test_aligned_pairs_approach_zero(self):
        z = 50.0 * np.eye(4)
        assert infonce_loss(z, z, np.eye(4)) < 1e-10

    def test_complex_latents_are_flattened(self, rng):
        zq = rng.normal(size=(5, 2)) + 1j * rng.normal(size=(5, 2))
        zk = rng.normal(size=(5, 2)) + 1j * rng.normal(size=(5, 2))
        W = rng.normal(size=(4, 4))
        flat_q = np.hstack([zq.real, zq.imag])
        flat_k = np.hstack([zk.real, zk.imag])
        assert infonce_loss(zq, zk, W) == infonce_loss(flat_q, flat_k, W)

    def test_shape_mismatch(self):
        with pytest.raises(SizeError):
            infonce_loss(np.ones((3, 2)), np.ones((3, 4)), np.eye(2))

    def test_shift_invariance(self, rng):
        logits = rng.normal(size=(6, 6))
        loss_a, g_a = infonce_from_logits(logits)
        loss_b, g_b = infonce_from_logits(logits + 3.7)
        assert abs(loss_a - loss_b) < 1e-12
        assert np.allclose(g_a, g_b, atol=1e-12)

    def test_gradients_match_finite_differences(self, rng):
        q, k, W = rng.normal(size=(5, 4)), rng.normal(size=(5, 4)), rng.normal(size=(4, 4))
        _, dq, dk, dW = infonce_grad(q, k, W)
        assert np.allclose(dq, finite_difference(lambda x: infonce_loss(x, k, W), q), atol=1e-6)
        assert np.allclose(dk, finite_difference(lambda x: infonce_loss(q, x, W), k), atol=1e-6)
        assert np.allclose(dW, finite_difference(lambda x: infonce_loss(q, k, x), W), atol=1e-6)


class TestEmaUpdate:
    def test_full_step_copies_query(self, rng):
        key, query = TanhMLP([2, 3, 2], rng), TanhMLP([2, 3, 2], rng)
        assert ema_update(key, query, 1.0).distance(query) == 0.0

    def test_small_step(self):
        key, query = TanhMLP([1, 1]), TanhMLP([1, 1])
        query.params["W0"] = np.ones((1, 1))
        assert abs(ema_update(key, query, 0.05).params["W0"][0, 0] - 0.05) < 1e-15

    def test_returns_new_network(self, rng):
        key, query = TanhMLP([2, 2], rng), TanhMLP([2, 2], rng)
        before = key.copy()
        ema_update(key, query, 0.5)
        assert key.distance(before) == 0.0

    @pytest.mark.parametrize("tau", [0.0, 1.5])
    def test_tau_range(self, tau):
        with pytest.raises(ValueError):
            ema_update(TanhMLP([1, 1]), TanhMLP([1, 1]), tau)


class TestGradEncoder:
    def test_sums_loss_terms(self, rng):
        params = EncoderParams.init(3, 5, 2, rng, out_scale=1.0)
        obs = rng.normal(size=(4, 3))
        a, b = rng.normal(size=(4, 4)), rng.normal(size=(4, 4))
        both = grad_encoder(params, obs, {"cst": a, "pred": b, "task": None})
        one = grad_encoder(params, obs, {"cst": a})
        other = grad_encoder(params, obs, {"pred": b})
        for name in both:
            assert np.allclose(both[name], one[name] + other[name])

    def test_complex_gradients_match_finite_differences(self, rng):
        params = EncoderParams.init(3, 5, 2, rng, out_scale=1.0)
        obs = rng.normal(size=(4, 3))
        g = rng.normal(size=(4, 2)) + 1j * rng.normal(size=(4, 2))
        grads = grad_encoder(params, obs, {"pred": g})

        for name, analytic in grads.items():
            def loss(v):
                z = encode(set_param(params.query, name, v), obs)
                return float(np.sum(np.real(np.conj(g) * z)))

            num = finite_difference(loss, params.query.params[name].ravel()).reshape(analytic.shape)
            assert np.allclose(analytic, num, atol=1e-6)

    def test_empty_losses_give_zero(self, rng):
        params = EncoderParams.init(3, 5, 2, rng)
        grads = grad_encoder(params, rng.normal(size=(2, 3)), {})
        assert all(np.all(v == 0) for v in grads.values())


class TestContrastiveStep:
    def test_gradients_match_finite_differences(self, rng):
        params = EncoderParams.init(3, 6, 2, rng, out_scale=1.0)
        params.key = TanhMLP([3, 6, 4], rng)
        obs = rng.normal(size=(5, 3))
        cfg = AugmentConfig(0.0, 0.0)
        _, grads, dW = contrastive_step_grads(params, obs, cfg, rng)
        k = params.key(obs)

        for name, analytic in grads.items():
            def loss(v):
                return infonce_loss(set_param(params.query, name, v)(obs), k, params.W)

            num = finite_difference(loss, params.query.params[name].ravel()).reshape(analytic.shape)
            assert np.allclose(analytic, num, atol=1e-6)

        num_W = finite_difference(lambda x: infonce_loss(params.query(obs), k, x), params.W)
        assert np.allclose(dW, num_W, atol=1e-6)

    @pytest.mark.slow
    def test_running_min_gradient_falls_on_separable_clusters(self):
        rng = np.random.default_rng(0)
        centers = 3.0 * np.vstack([np.eye(4), -np.eye(4)])
        params = EncoderParams.init(4, 32, 4, rng, out_scale=1.0)
        hist = train_contrastive(params, cluster_sampler(centers, 0.05), 10000, rng, AugmentConfig(0.01, 0.0),
                                 lr=1e-2, schedule="robbins_monro", T0=1000)
        assert all(a >= b for a, b in zip(hist.running_min, hist.running_min[1:]))
        assert hist.running_min[-1] < 1e-4
        assert np.mean(hist.losses[-100:]) < np.mean(hist.losses[:100])


class TestEncoderCheckpoint:
    def test_roundtrip(self, rng, tmp_path):
        params = EncoderParams.init(4, 5, 2, rng)
        cfg = AugmentConfig(0.02, 0.2)
        path = str(tmp_path / "enc.json")
        save_encoder(params, cfg, path)
        back, back_cfg = load_encoder(path)
        assert back.query.distance(params.query) == 0.0
        assert np.array_equal(back.W, params.W)
        assert back_cfg == cfg

    def test_version_checked(self, rng):
        d = encoder_to_dict(EncoderParams.init(4, 5, 2, rng), AugmentConfig())
        d["version"] = 99
        with pytest.raises(ValueError):
            encoder_from_dict(d)

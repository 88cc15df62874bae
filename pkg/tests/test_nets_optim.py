import numpy as np
import pytest

from conftest import finite_difference
from skclib.errors import SizeError
from skclib.nets import TanhMLP
from skclib.optim import SGD, Adam, pack_array, robbins_monro, unpack_array


class TestTanhMLP:
    def test_zero_network_outputs_zero(self):
        net = TanhMLP([3, 5, 2])
        assert np.array_equal(net(np.ones((4, 3))), np.zeros((4, 2)))

    def test_backward_matches_finite_differences(self, rng):
        net = TanhMLP([3, 8, 8, 2], rng)
        x = rng.normal(size=(5, 3))
        c = rng.normal(size=(5, 2))
        out, inputs = net.forward(x)
        dx, grads = net.backward(inputs, c)

        def loss_of_param(name):
            def f(v):
                saved = net.params[name]
                net.params[name] = v.reshape(saved.shape)
                val = float(np.sum(c * net(x)))
                net.params[name] = saved
                return val

            return f

        for name, g in grads.items():
            num = finite_difference(loss_of_param(name), net.params[name].ravel()).reshape(g.shape)
            assert np.allclose(g, num, atol=1e-6)

        num_x = finite_difference(lambda v: float(np.sum(c * net(v))), x)
        assert np.allclose(dx, num_x, atol=1e-6)

    def test_input_dimension_checked(self, rng):
        with pytest.raises(SizeError):
            TanhMLP([3, 4, 1], rng)(np.ones(2))

    def test_ema_and_distance(self, rng):
        a = TanhMLP([2, 3, 1], rng)
        b = a.copy()
        assert a.distance(b) == 0.0
        b.params["b1"] = b.params["b1"] + 1.0
        a.ema_from(b, 0.05)
        assert np.allclose(a.params["b1"], 0.05)
        a.ema_from(b, 1.0)
        assert a.distance(b) == 0.0

    def test_dict_roundtrip_and_shape_check(self, rng):
        net = TanhMLP([2, 4, 1], rng)
        back = TanhMLP.from_dict(net.to_dict())
        assert back.distance(net) == 0.0
        d = net.to_dict()
        d["sizes"] = [2, 5, 1]
        with pytest.raises(SizeError):
            TanhMLP.from_dict(d)

    def test_out_scale(self):
        net = TanhMLP([2, 3, 1], np.random.default_rng(0), out_scale=0.0)
        assert np.all(net.params["W1"] == 0)


class TestOptimizers:
    def test_robbins_monro_schedule(self):
        assert robbins_monro(0.1, 0) == 0.1
        assert robbins_monro(0.1, 1000, T0=1000) == 0.05

    def test_sgd_step(self):
        opt = SGD(0.5)
        params = opt.step({"w": np.array([1.0, 2.0])}, {"w": np.array([2.0, 2.0])})
        assert np.allclose(params["w"], [0.0, 1.0])
        assert opt.t == 1

    def test_sgd_decaying_lr(self):
        opt = SGD(1.0, schedule="robbins_monro", T0=1)
        opt.step({"w": np.zeros(1)}, {"w": np.ones(1)})
        assert opt.current_lr() == 0.5

    def test_adam_first_step_is_lr_sized(self):
        opt = Adam(0.01)
        params = opt.step({"w": np.array([1.0, -1.0])}, {"w": np.array([3.0, -0.2])})
        assert np.allclose(params["w"], [0.99, -0.99])

    def test_adam_lr_scale_per_key(self):
        opt = Adam(0.01, lr_scale={"slow": 0.1})
        params = opt.step({"fast": np.ones(1), "slow": np.ones(1)}, {"fast": np.ones(1), "slow": np.ones(1)})
        assert np.allclose(params["fast"], [0.99])
        assert np.allclose(params["slow"], [0.999])

    def test_adam_only_touches_given_keys(self):
        opt = Adam(0.1)
        params = opt.step({"a": np.ones(2), "b": np.ones(2)}, {"a": np.ones(2)})
        assert np.array_equal(params["b"], np.ones(2))

    def test_adam_complex_componentwise(self):
        opt = Adam(0.01)
        params = opt.step({"z": np.array([1.0 + 1.0j])}, {"z": np.array([5.0 - 0.5j])})
        assert np.allclose(params["z"], [0.99 + 1.01j])

    def test_adam_minimizes_quadratic(self):
        opt = Adam(0.01)
        params = {"w": np.array([3.0, -2.0])}
        for _ in range(3000):
            params = opt.step(params, {"w": 2.0 * params["w"]})

        assert np.max(np.abs(params["w"])) < 0.05

    def test_state_dict_roundtrip(self):
        opt = Adam(0.1)
        opt.step({"z": np.array([1.0 + 1.0j])}, {"z": np.array([1.0 - 2.0j])})
        other = Adam(0.1)
        other.load_state_dict(opt.state_dict())
        assert other.t == 1
        assert np.array_equal(other.m["z"], opt.m["z"])

    def test_pack_array(self):
        a = np.arange(6.0).reshape(2, 3)
        assert np.array_equal(unpack_array(pack_array(a)), a)
        z = np.array([1.0 + 2.0j])
        assert np.array_equal(unpack_array(pack_array(z)), z)

import math

import numpy as np
import pytest

from skclib.envs import ENV_SPECS, linearize
from skclib.errors import DivergenceError, InsufficientExcitationError
from skclib.spectral import SpectralKoopman, discretize, loss_pred
from skclib.sysid import (INIT_PRESETS, FitReport, InitStrategy, curvature_estimate, fit_dense_gd, fit_dense_lsq,
                          fit_spectral_sgd, init_spectrum, linear_modal_dataset, modal_model, simulate_linear,
                          spectral_trajectories)
from skclib.trajectory import Trajectory, TransitionBatch


def stable_system(rng, n, u, radius=0.5):
    Q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    return radius * Q, rng.normal(size=(n, u))


class TestFitDenseLsq:
    def test_scalar_recovery(self, rng):
        batch = simulate_linear([[0.9]], [[0.1]], 50, rng)
        A, B, report = fit_dense_lsq(batch)
        assert abs(A[0, 0] - 0.9) < 1e-10
        assert abs(B[0, 0] - 0.1) < 1e-10
        assert report.final_model.kind == "dense"

    def test_identity_dynamics(self, rng):
        z = rng.normal(size=(30, 3))
        A, B, _ = fit_dense_lsq(TransitionBatch(z, rng.normal(size=(30, 2)), z.copy()))
        assert np.allclose(A, np.eye(3), atol=1e-10)
        assert np.allclose(B, 0, atol=1e-10)

    def test_noiseless_recovery_at_ten_times_dimension(self, rng):
        A_true, B_true = stable_system(rng, 4, 2)
        batch = simulate_linear(A_true, B_true, 10 * 6, rng)
        A, B, report = fit_dense_lsq(batch, A_true, B_true)
        assert np.linalg.norm(A - A_true) < 1e-8
        assert np.linalg.norm(B - B_true) < 1e-8
        assert report.param_error_curve[-1][0] == 60

    def test_error_curve_columns_and_sizes(self, rng, tmp_path):
        A_true, B_true = stable_system(rng, 2, 1)
        batch = simulate_linear(A_true, B_true, 500, rng, sigma=0.01)
        _, _, report = fit_dense_lsq(batch, A_true, B_true, sample_sizes=[1, 50, 200, 500])
        frame = report.frame()
        assert list(frame.columns) == ["n", "errA", "errB", "loss"]
        assert list(frame["n"]) == [50, 200, 500]
        path = tmp_path / "curve.csv"
        report.to_csv(str(path))
        assert path.read_text().splitlines()[0] == "n,errA,errB,loss"

    def test_noise_error_shrinks_with_samples(self):
        errs = {1000: [], 10000: []}
        for seed in range(20):
            rng = np.random.default_rng(seed)
            A_true, B_true = stable_system(rng, 16, 4)
            batch = simulate_linear(A_true, B_true, 10000, rng, sigma=0.01, x0=np.zeros(16))
            _, _, report = fit_dense_lsq(batch, A_true, B_true, sample_sizes=[1000, 10000])
            for n, err_a, err_b, _ in report.param_error_curve:
                errs[n].append(math.hypot(err_a, err_b))

        assert np.median(errs[10000]) <= np.median(errs[1000]) / 3.0

    def test_agrees_with_gradient_descent(self, rng):
        A_true, B_true = stable_system(rng, 2, 1)
        batch = simulate_linear(A_true, B_true, 400, rng, sigma=0.01)
        A, B, _ = fit_dense_lsq(batch)
        A_gd, B_gd = fit_dense_gd(batch)
        assert np.max(np.abs(A - A_gd)) < 1e-6
        assert np.max(np.abs(B - B_gd)) < 1e-6

    def test_too_few_samples(self, rng):
        with pytest.raises(InsufficientExcitationError):
            fit_dense_lsq(TransitionBatch(rng.normal(size=(2, 2)), rng.normal(size=(2, 1)), rng.normal(size=(2, 2))))

    def test_no_excitation(self):
        with pytest.raises(InsufficientExcitationError):
            fit_dense_lsq(TransitionBatch(np.zeros((20, 2)), np.zeros((20, 1)), np.zeros((20, 2))))

    def test_complex_latents_use_real_embedding(self, koopman, rng):
        trajs = spectral_trajectories(koopman, 3, 40, rng)
        A, B, _ = fit_dense_lsq(TransitionBatch.from_trajectories(trajs))
        assert A.shape == (8, 8) and B.shape == (8, 1)


class TestFitReport:
    def test_rows_must_increase(self):
        report = FitReport()
        report.add(10, 1.0, 1.0, 1.0)
        with pytest.raises(ValueError):
            report.add(10, 0.5, 0.5, 0.5)


class TestInitSpectrum:
    def test_constant_increasing(self, rng):
        K = init_spectrum(InitStrategy("constant", -0.2, omega_mode="increasing_freq"), 3, rng)
        assert np.allclose(K.eigenvalues, [-0.2 + 1j * np.pi, -0.2 + 2j * np.pi, -0.2 + 3j * np.pi])

    def test_single_random_mode_range(self):
        for seed in range(20):
            K = init_spectrum(INIT_PRESETS["constant_random"], 1, np.random.default_rng(seed))
            assert 0.0 <= K.omega[0] <= np.pi

    def test_learnable_mu_in_bounds(self, rng):
        K = init_spectrum(INIT_PRESETS["learnable_increasing"], 50, rng)
        assert np.all((K.mu >= -0.5) & (K.mu <= -0.01))
        assert np.unique(K.mu).size > 1

    def test_deterministic_per_seed(self):
        a = init_spectrum(INIT_PRESETS["learnable_random"], 6, np.random.default_rng(5), u_dim=2)
        b = init_spectrum(INIT_PRESETS["learnable_random"], 6, np.random.default_rng(5), u_dim=2)
        assert np.array_equal(a.mu, b.mu) and np.array_equal(a.omega, b.omega) and np.array_equal(a.L, b.L)

    def test_conjugate_pairs(self, rng):
        K = init_spectrum(InitStrategy(conjugate_pairs=True), 4, rng)
        assert np.allclose(K.omega[2:], -K.omega[:2])
        assert np.allclose(K.L[2:], np.conj(K.L[:2]))
        with pytest.raises(ValueError):
            init_spectrum(InitStrategy(conjugate_pairs=True), 3, rng)

    def test_rejects_empty(self, rng):
        with pytest.raises(ValueError):
            init_spectrum(InitStrategy(), 0, rng)


class TestFitSpectralSgd:
    def truth(self):
        return SpectralKoopman([-0.2, -0.3], [1.0, 2.5], [[1.0 + 0.5j], [0.3 - 1.0j]], dt=0.1)

    def test_self_identification(self):
        rng = np.random.default_rng(2)
        K_true = self.truth()
        trajs = spectral_trajectories(K_true, 10, 60, rng)
        K0 = SpectralKoopman(K_true.mu + 0.05, K_true.omega + 0.05, K_true.L + 0.05, dt=0.1)
        data = TransitionBatch.from_trajectories(trajs)
        start = loss_pred(discretize(K0), data)
        K, report = fit_spectral_sgd(trajs, INIT_PRESETS["constant_increasing"], epochs=500, rng=rng,
                                     truth=K_true, dt=0.1, K0=K0)
        losses = report.frame()["loss"].to_numpy()
        assert losses[-1] <= 1e-6
        assert losses[-1] < start
        assert np.all(np.diff(losses) <= 1e-6)

    def test_mu_stays_in_bounds(self):
        rng = np.random.default_rng(4)
        trajs = spectral_trajectories(self.truth(), 5, 30, rng)
        K, _ = fit_spectral_sgd(trajs, INIT_PRESETS["learnable_random"], epochs=50, rng=rng, dt=0.1,
                                schedule="robbins_monro", batch_size=32)
        assert np.all((K.mu >= -0.5) & (K.mu <= -0.01))

    def test_zero_data_leaves_parameters(self, rng):
        T = 10
        trajs = [Trajectory(states=np.zeros((T + 1, 4)), controls=np.zeros((T, 1)),
                            latents=np.zeros((T + 1, 2), dtype=complex)) for _ in range(3)]
        K0 = init_spectrum(INIT_PRESETS["constant_increasing"], 2, rng)
        K, report = fit_spectral_sgd(trajs, INIT_PRESETS["constant_increasing"], epochs=5, K0=K0)
        assert report.param_error_curve[0][3] == 0.0
        assert np.array_equal(K.mu, K0.mu) and np.array_equal(K.omega, K0.omega) and np.array_equal(K.L, K0.L)

    def test_divergence_names_lr(self, rng):
        trajs = spectral_trajectories(self.truth(), 3, 30, rng)
        with pytest.raises(DivergenceError) as err:
            fit_spectral_sgd(trajs, INIT_PRESETS["constant_increasing"], epochs=20, lr=1e6, backtrack=False,
                             rng=rng, dt=0.1)

        assert err.value.lr == 1e6
        assert "1000000" in str(err.value)

    def test_short_trajectories_rejected(self):
        with pytest.raises(ValueError):
            fit_spectral_sgd([Trajectory(np.zeros((2, 2)), np.zeros((1, 1)), latents=np.zeros((2, 1)))],
                             INIT_PRESETS["constant_increasing"])

    def test_constant_increasing_reaches_lowest_loss(self):
        A_c, B_c = linearize(ENV_SPECS["pendulum"], np.array([np.pi, 0.0]), np.zeros(1), discrete=False)
        finals = {}
        for name, strategy in INIT_PRESETS.items():
            rng = np.random.default_rng(0)
            K_true, trajs = linear_modal_dataset(A_c, B_c, 0.05, 5, 40, rng)
            _, report = fit_spectral_sgd(trajs, strategy, epochs=200, rng=rng, m=K_true.m, dt=0.05)
            losses = report.frame()["loss"].to_numpy()
            assert np.all(np.isfinite(losses))
            finals[name] = losses[-1]

        assert set(finals) == set(INIT_PRESETS)
        assert finals["constant_increasing"] <= min(finals.values()) + 1e-12


class TestModalModel:
    def test_one_mode_per_conjugate_pair(self):
        A_c = np.array([[0.0, 1.0], [-4.0, -0.4]])
        K, V = modal_model(A_c, np.array([[0.0], [1.0]]), 0.05)
        assert K.m == 1
        assert K.omega[0] > 0
        assert np.allclose(K.mu[0], -0.2)

    def test_curvature_positive_on_data(self, koopman, rng):
        trajs = spectral_trajectories(koopman, 2, 20, rng)
        assert curvature_estimate(koopman, TransitionBatch.from_trajectories(trajs)) > 0

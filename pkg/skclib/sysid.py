"""System identification: dense least squares, spectral gradient fitting and spectrum initialization."""

from dataclasses import dataclass, field
import logging

import numpy as np
import pandas as pd
from scipy.linalg import eig

from skclib.errors import DivergenceError, EmptyInputError, InsufficientExcitationError, SingularMatrixError
from skclib.linalg_core import solve_linear
from skclib.optim import robbins_monro
from skclib.spectral import (DEFAULT_MU_BOUNDS, DiscreteLinearModel, SpectralKoopman, as_real, discretize,
                             grad_pred, loss_pred, real_block_form, step)
from skclib.trajectory import Trajectory, TransitionBatch

DIVERGENCE_LOSS = 1e6


@dataclass
class FitReport:
    param_error_curve: list = field(default_factory=list)
    final_model: DiscreteLinearModel = None
    condition_number: float = float("nan")

    def add(self, n, err_a, err_b, loss):
        if self.param_error_curve and n <= self.param_error_curve[-1][0]:
            raise ValueError("error curve must be indexed by strictly increasing n")

        self.param_error_curve.append((int(n), float(err_a), float(err_b), float(loss)))

    def frame(self):
        return pd.DataFrame(self.param_error_curve, columns=["n", "errA", "errB", "loss"])

    def to_csv(self, path):
        self.frame().to_csv(path, index=False)


def _real_design(batch):
    z, zn = batch.z, batch.z_next
    if np.iscomplexobj(z) or np.iscomplexobj(zn):
        z, zn = as_real(z), as_real(zn)

    return np.hstack([np.real(z), batch.u]), np.real(zn)


def _frob_err(est, true):
    if true is None:
        return float("nan")

    return float(np.linalg.norm(est - true))


def _lsq(X, Z):
    XtX = X.T @ X
    try:
        theta = solve_linear(XtX, X.T @ Z, pivot_tol=1e-10)
    except SingularMatrixError as e:
        raise InsufficientExcitationError("insufficient excitation: " + str(e))

    return theta, XtX


def fit_dense_lsq(batch, A_true=None, B_true=None, sample_sizes=None):
    """Normal-equation fit Theta = (X^T X)^{-1} X^T Z_next with X = [z_k | u_k].

    Returns (A_hat, B_hat, FitReport); the report's error curve refits on growing prefixes of the batch
    (sample_sizes, default the full batch only).
    """
    X, Z = _real_design(batch)
    n = Z.shape[1]
    p = X.shape[1]
    if len(X) < p:
        raise InsufficientExcitationError("insufficient excitation: " + str(len(X)) + " samples for "
                                          + str(p) + " regressors")

    report = FitReport()
    sizes = sorted(set(int(s) for s in (sample_sizes or [len(X)]) if p <= s <= len(X)))
    if not sizes or sizes[-1] != len(X):
        sizes.append(len(X))

    for s in sizes:
        theta, XtX = _lsq(X[:s], Z[:s])
        loss = float(np.mean(np.sum((Z[:s] - X[:s] @ theta) ** 2, axis=1)))
        report.add(s, _frob_err(theta[:n].T, A_true), _frob_err(theta[n:].T, B_true), loss)

    A_hat, B_hat = theta[:n].T, theta[n:].T
    report.final_model = DiscreteLinearModel(A_hat, B_hat, "dense")
    report.condition_number = float(np.linalg.cond(XtX))
    logging.info("Dense least-squares fit on " + str(len(X)) + " samples, condition number "
                 + "{:.3e}".format(report.condition_number))
    return A_hat, B_hat, report


def fit_dense_gd(batch, lr=None, tol=1e-14, max_iters=200000):
    """Gradient descent on the same objective as fit_dense_lsq (two-solver cross-check)."""
    X, Z = _real_design(batch)
    N = len(X)
    if N == 0:
        raise EmptyInputError("transition batch is empty")

    H = 2.0 * X.T @ X / N
    if lr is None:
        lr = 1.0 / np.linalg.eigvalsh(H)[-1]

    theta = np.zeros((X.shape[1], Z.shape[1]))
    XtZ = 2.0 * X.T @ Z / N
    for _ in range(max_iters):
        g = H @ theta - XtZ
        theta = theta - lr * g
        if np.linalg.norm(g) < tol:
            break

    n = Z.shape[1]
    return theta[:n].T, theta[n:].T


def simulate_linear(A, B, n_samples, rng, sigma=0.0, u_scale=1.0, x0=None):
    """One trajectory of x' = A x + B u + sigma*xi under i.i.d. uniform controls in [-u_scale, u_scale]."""
    A = np.array(A, dtype=float, ndmin=2)
    B = np.array(B, dtype=float, ndmin=2)
    n, u = B.shape
    x = rng.normal(size=n) if x0 is None else np.asarray(x0, dtype=float)
    U = rng.uniform(-u_scale, u_scale, size=(n_samples, u))
    xs = np.zeros((n_samples + 1, n))
    xs[0] = x
    for k in range(n_samples):
        xs[k + 1] = A @ xs[k] + B @ U[k]
        if sigma > 0:
            xs[k + 1] += sigma * rng.normal(size=n)

    return TransitionBatch(xs[:-1], U, xs[1:])


@dataclass
class InitStrategy:
    """Eigenvalue initialization: mu_mode constant|learnable, omega_mode increasing_freq|random."""
    mu_mode: str = "constant"
    mu_value: float = -0.2
    mu_range: tuple = DEFAULT_MU_BOUNDS
    omega_mode: str = "increasing_freq"
    omega_range: tuple = None
    conjugate_pairs: bool = False
    name: str = "constant_increasing"


INIT_PRESETS = {
    "constant_increasing": InitStrategy("constant", omega_mode="increasing_freq", name="constant_increasing"),
    "constant_random": InitStrategy("constant", omega_mode="random", name="constant_random"),
    "learnable_increasing": InitStrategy("learnable", omega_mode="increasing_freq", name="learnable_increasing"),
    "learnable_random": InitStrategy("learnable", omega_mode="random", name="learnable_random"),
}


def init_spectrum(strategy, m, rng, u_dim=1, dt=0.05, L_scale=0.1, mu_bounds=DEFAULT_MU_BOUNDS):
    """Initial SpectralKoopman for the given strategy.

    increasing_freq sets omega_j = j*pi (j = 1..m), random draws omega_j ~ U(0, m*pi). With conjugate_pairs
    the first m/2 modes are drawn and the rest are their conjugates.
    """
    if m < 1:
        raise ValueError("m must be at least 1")

    half = m
    if strategy.conjugate_pairs:
        if m % 2:
            raise ValueError("conjugate pairs need an even mode count, got " + str(m))

        half = m // 2

    if strategy.mu_mode == "constant":
        mu = np.full(half, float(strategy.mu_value))
    elif strategy.mu_mode == "learnable":
        mu = rng.uniform(strategy.mu_range[0], strategy.mu_range[1], size=half)
    else:
        raise ValueError("unknown mu_mode " + str(strategy.mu_mode))

    if strategy.omega_mode == "increasing_freq":
        omega = np.pi * np.arange(1, half + 1)
    elif strategy.omega_mode == "random":
        lo, hi = strategy.omega_range or (0.0, m * np.pi)
        omega = rng.uniform(lo, hi, size=half)
    else:
        raise ValueError("unknown omega_mode " + str(strategy.omega_mode))

    L = L_scale * (rng.normal(size=(half, u_dim)) + 1j * rng.normal(size=(half, u_dim)))
    if strategy.conjugate_pairs:
        mu = np.concatenate([mu, mu])
        omega = np.concatenate([omega, -omega])
        L = np.vstack([L, np.conj(L)])

    return SpectralKoopman(mu, omega, L, dt, mu_bounds)


def _tie_conjugates(K):
    h = K.m // 2
    K.mu[h:] = K.mu[:h]
    K.omega[h:] = -K.omega[:h]
    K.L[h:] = np.conj(K.L[:h])


def _flat_grads(g):
    return np.concatenate([g.mu, g.omega, g.L.real.ravel(), g.L.imag.ravel()])


def _shifted(K, v, eps):
    m, n_l = K.m, K.L.size
    Kp = K.copy()
    Kp.mu = Kp.mu + eps * v[:m]
    Kp.omega = Kp.omega + eps * v[m:2 * m]
    Kp.L = Kp.L + eps * (v[2 * m:2 * m + n_l] + 1j * v[2 * m + n_l:]).reshape(K.L.shape)
    return Kp


def curvature_estimate(K, batch, iters=20, eps=1e-5, seed=0):
    """Power iteration on finite-difference Hessian-vector products of loss_pred."""
    rng = np.random.default_rng(seed)
    v = rng.normal(size=2 * K.m + 2 * K.L.size)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        hv = (_flat_grads(grad_pred(_shifted(K, v, eps), batch))
              - _flat_grads(grad_pred(_shifted(K, v, -eps), batch))) / (2 * eps)
        lam = float(np.linalg.norm(hv))
        if lam == 0.0:
            return 0.0

        v = hv / lam

    return lam


def _param_errors(K, truth):
    if truth is None:
        return float("nan"), float("nan")

    A, B = real_block_form(discretize(K))
    A_t, B_t = real_block_form(discretize(truth))
    return float(np.linalg.norm(A - A_t)), float(np.linalg.norm(B - B_t))


def fit_spectral_sgd(trajs, init, epochs=500, lr=None, schedule="constant", T0=1000, batch_size=None,
                     learn_dt=False, rng=None, truth=None, m=None, u_dim=None, dt=0.05, backtrack=True,
                     K0=None, log_every=1):
    """Gradient descent on loss_pred over the latents of trajs, projecting mu into its bounds every step.

    lr=None uses the stability cap 1/L_hat from curvature_estimate on the first batch. With backtrack the
    step is halved until the loss does not increase. A loss above 1e6 raises DivergenceError.
    Returns (SpectralKoopman, FitReport); the report rows are indexed by samples processed.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    for tr in trajs:
        if len(tr) < 2:
            raise ValueError("every trajectory needs at least 2 steps")

    data = TransitionBatch.from_trajectories(trajs, use="latents")
    data.require_nonempty()
    m = data.z.shape[1] if m is None else m
    u_dim = data.u.shape[1] if u_dim is None else u_dim
    K = init_spectrum(init, m, rng, u_dim, dt) if K0 is None else K0.copy()
    K.project()
    first = data if batch_size is None else data.head(batch_size)
    L_hat = curvature_estimate(K, first)
    cap = 1.0 / L_hat if L_hat > 0 else 1e-3
    if lr is None:
        lr = cap
    elif lr > cap:
        logging.warning("learning rate " + str(lr) + " exceeds the stability cap " + "{:.4g}".format(cap))

    report = FitReport()
    n_seen = 0
    loss = loss_pred(discretize(K), data)
    logging.info("Spectral fit (" + init.name + "): " + str(len(data)) + " transitions, m=" + str(m)
                 + ", lr " + "{:.4g}".format(lr) + ", initial loss " + "{:.4e}".format(loss))
    t = 0
    for epoch in range(epochs):
        if batch_size is None:
            batches = [data]
        else:
            order = rng.permutation(len(data))
            batches = [TransitionBatch(data.z[idx], data.u[idx], data.z_next[idx])
                       for idx in np.array_split(order, max(1, len(data) // batch_size))]

        for b in batches:
            step_lr = robbins_monro(lr, t, T0) if schedule == "robbins_monro" else lr
            K, step_lr = _descent_step(K, b, step_lr, learn_dt, init.conjugate_pairs, backtrack)
            t += 1
            n_seen += len(b)

        loss = loss_pred(discretize(K), data)
        if not np.isfinite(loss) or loss > DIVERGENCE_LOSS:
            raise DivergenceError("spectral fit diverged (loss " + "{:.3e}".format(loss) + ") at lr " + str(lr),
                                  lr=lr)

        if epoch % log_every == 0 or epoch == epochs - 1:
            err_a, err_b = _param_errors(K, truth)
            report.add(n_seen, err_a, err_b, loss)

    report.final_model = DiscreteLinearModel.from_spectral(discretize(K))
    logging.info("Spectral fit (" + init.name + ") finished with loss " + "{:.4e}".format(loss))
    return K, report


def _descent_step(K, batch, lr, learn_dt, tie, backtrack):
    g = grad_pred(K, batch)
    base = g.extra["loss"]
    for _ in range(60):
        cand = K.copy()
        cand.mu = cand.mu - lr * g.mu
        cand.omega = cand.omega - lr * g.omega
        cand.L = cand.L - lr * g.L
        if learn_dt:
            cand.dt = max(cand.dt - lr * g.dt, 1e-6)

        cand.project()
        if tie:
            _tie_conjugates(cand)

        if not backtrack:
            return cand, lr

        if loss_pred(discretize(cand), batch) <= base:
            return cand, lr

        lr *= 0.5

    return K, lr


def spectral_trajectories(K, n_traj, T, rng, u_scale=1.0, z_scale=1.0, sigma=0.0):
    """Trajectories generated by K itself under i.i.d. uniform controls (self-identification data)."""
    d = discretize(K)
    trajs = []
    for _ in range(n_traj):
        z = z_scale * (rng.normal(size=K.m) + 1j * rng.normal(size=K.m))
        U = rng.uniform(-u_scale, u_scale, size=(T, K.u_dim))
        zs = [z]
        for k in range(T):
            z = step(d, z, U[k])
            if sigma > 0:
                z = z + sigma * (rng.normal(size=K.m) + 1j * rng.normal(size=K.m))

            zs.append(z)

        zs = np.array(zs)
        trajs.append(Trajectory(states=as_real(zs), controls=U, latents=zs))

    return trajs


def modal_model(A_c, B_c, dt, mu_bounds=DEFAULT_MU_BOUNDS):
    """Diagonalize a continuous linearization and keep one mode per conjugate pair (Im lambda >= 0).

    Returns (SpectralKoopman, V) with V the eigenvector matrix of the kept modes, so z = (V^+ x) restricted
    to those modes.
    """
    lam, V = eig(A_c)
    if np.linalg.cond(V) > 1e12:
        raise SingularMatrixError("linearization is not diagonalizable (eigenvector condition "
                                  + "{:.3e}".format(np.linalg.cond(V)) + ")")

    keep = np.where(lam.imag >= 0)[0]
    Vinv = np.linalg.inv(V)
    L = (Vinv @ np.asarray(B_c, dtype=float))[keep]
    K = SpectralKoopman(lam.real[keep], lam.imag[keep], L, dt, mu_bounds)
    return K, V[:, keep]


def linear_modal_dataset(A_c, B_c, dt, n_traj, T, rng, u_scale=1.0):
    """Ground-truth spectral model of a linearized task plus trajectories it generates."""
    K, _ = modal_model(A_c, B_c, dt)
    return K, spectral_trajectories(K, n_traj, T, rng, u_scale)

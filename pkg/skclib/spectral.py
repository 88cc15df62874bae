"""Diagonal complex linear dynamics in mode coordinates.

Continuous generator: eigenvalues lambda_j = mu_j + i*omega_j and complex input matrix L (m x u).
Zero-order-hold discretization gives z_{t+1} = lambda_bar * z_t + L_bar @ u_t elementwise per mode.

Gradients with respect to complex quantities use the packed convention
g = dl/dRe + i*dl/dIm, so a first-order change is dl = Re(conj(g) * dtheta).
"""

from dataclasses import dataclass, field
import json
import logging

import numpy as np

from skclib.errors import DegenerateGradientError, EmptyInputError, SizeError
from skclib.linalg_core import causal_conv

SERIES_CUTOFF = 1e-6
DEFAULT_MU_BOUNDS = (-0.5, -0.01)


@dataclass
class SpectralKoopman:
    mu: np.ndarray
    omega: np.ndarray
    L: np.ndarray
    dt: float = 0.05
    mu_bounds: tuple = DEFAULT_MU_BOUNDS

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float).ravel()
        self.omega = np.asarray(self.omega, dtype=float).ravel()
        self.L = np.atleast_2d(np.asarray(self.L, dtype=np.complex128))
        if self.mu.shape != self.omega.shape:
            raise SizeError("mu has " + str(self.mu.size) + " modes but omega has " + str(self.omega.size))

        if self.L.shape[0] != self.mu.size:
            raise SizeError("L has " + str(self.L.shape[0]) + " rows, expected " + str(self.mu.size))

        if not self.dt > 0:
            raise ValueError("dt must be positive, got " + str(self.dt))

    @property
    def m(self):
        return self.mu.size

    @property
    def u_dim(self):
        return self.L.shape[1]

    @property
    def eigenvalues(self):
        return self.mu + 1j * self.omega

    def project(self):
        lo, hi = self.mu_bounds
        self.mu = np.clip(self.mu, lo, hi)
        return self

    def is_stable(self):
        return bool(np.all(self.mu < 0))

    def copy(self):
        return SpectralKoopman(self.mu.copy(), self.omega.copy(), self.L.copy(), self.dt, tuple(self.mu_bounds))

    def to_dict(self):
        return {"m": int(self.m), "mu": self.mu.tolist(), "omega": self.omega.tolist(),
                "L_re": self.L.real.tolist(), "L_im": self.L.imag.tolist(), "dt": float(self.dt)}

    @classmethod
    def from_dict(cls, d, mu_bounds=DEFAULT_MU_BOUNDS):
        L = np.asarray(d["L_re"], dtype=float) + 1j * np.asarray(d["L_im"], dtype=float)
        K = cls(d["mu"], d["omega"], L, float(d["dt"]), mu_bounds)
        if K.m != int(d["m"]):
            raise SizeError("declared m=" + str(d["m"]) + " but " + str(K.m) + " modes stored")

        return K

    def eigen_snapshot(self, step=None):
        lam_bar = np.exp(self.eigenvalues * self.dt)
        snap = {"mu": self.mu.tolist(), "omega": self.omega.tolist(), "abs_lambda_bar": np.abs(lam_bar).tolist()}
        if step is not None:
            snap["step"] = int(step)

        return snap


def save_koopman(K, path):
    with open(path, 'w') as fp:
        json.dump(K.to_dict(), fp, indent=2)


def load_koopman(path):
    with open(path) as fp:
        return SpectralKoopman.from_dict(json.load(fp))


@dataclass
class DiscreteSpectral:
    lambda_bar: np.ndarray
    control_bar: np.ndarray

    @property
    def m(self):
        return self.lambda_bar.size

    @property
    def u_dim(self):
        return self.control_bar.shape[1]


@dataclass
class DiscreteLinearModel:
    """Real state-space pair x' = A x + B u, kind is 'dense' or 'spectral'."""
    A: np.ndarray
    B: np.ndarray
    kind: str = "dense"

    @classmethod
    def from_spectral(cls, d):
        A, B = real_block_form(d)
        return cls(A, B, "spectral")


def _phi(lam, dt):
    x = lam * dt
    small = np.abs(x) < SERIES_CUTOFF
    safe = np.where(small, 1.0, lam)
    return np.where(small, dt * (1.0 + x / 2.0), (np.exp(x) - 1.0) / safe)


def _phi_prime(lam, lam_bar, phi, dt):
    small = np.abs(lam * dt) < SERIES_CUTOFF
    safe = np.where(small, 1.0, lam)
    return np.where(small, dt * dt / 2.0 + dt ** 3 * lam / 3.0, (dt * lam_bar - phi) / safe)


def discretize(K):
    """Exact ZOH map; modes with |lambda*dt| below SERIES_CUTOFF use the series form of (e^x - 1)/lambda."""
    lam = K.eigenvalues
    lam_bar = np.exp(lam * K.dt)
    return DiscreteSpectral(lam_bar, _phi(lam, K.dt)[:, None] * K.L)


def _check_step_args(d, z, u):
    z = np.asarray(z, dtype=np.complex128)
    u = np.asarray(u, dtype=float)
    if z.shape[-1] != d.m:
        raise SizeError("state has " + str(z.shape[-1]) + " modes, model has " + str(d.m))

    if u.shape[-1] != d.u_dim:
        raise SizeError("control has dimension " + str(u.shape[-1]) + ", model expects " + str(d.u_dim))

    return z, u


def step(d, z, u):
    z, u = _check_step_args(d, z, u)
    return d.lambda_bar * z + u @ d.control_bar.T


def step_backward(d, g_next):
    """Pull the gradient at z_{t+1} back through one step; returns (grad z_t, grad c_t, grad u_t)."""
    g_next = np.asarray(g_next, dtype=np.complex128)
    g_z = np.conj(d.lambda_bar) * g_next
    g_u = np.real(np.conj(g_next) @ d.control_bar)
    return g_z, g_next, g_u


def predict_sequential(d, z0, controls):
    controls = np.asarray(controls, dtype=float)
    if controls.shape[-2] == 0:
        raise SizeError("prediction horizon must be at least 1")

    z = np.asarray(z0, dtype=np.complex128)
    out = []
    for k in range(controls.shape[-2]):
        z = step(d, z, controls[..., k, :])
        out.append(z)

    return np.stack(out, axis=-2)


def predict_parallel(d, z0, controls, method="fft"):
    """All tau predicted states z_{t+1..t+tau} at once.

    Each mode is the causal convolution of its geometric kernel (1, lambda_bar, lambda_bar^2, ...) with the
    projected inputs L_bar @ u_k, plus the free response lambda_bar^k * z0. Leading axes of z0 and controls
    are batch axes.
    """
    z0, controls = _check_step_args(d, z0, controls)
    tau = controls.shape[-2]
    if tau == 0:
        raise SizeError("prediction horizon must be at least 1")

    c = np.swapaxes(controls @ d.control_bar.T, -1, -2)
    powers = np.power(d.lambda_bar[:, None], np.arange(tau + 1)[None, :])
    kernel = np.ascontiguousarray(np.broadcast_to(powers[:, :tau], c.shape))
    forced = causal_conv(kernel, c, method=method)
    free = powers[:, 1:] * z0[..., :, None]
    return np.swapaxes(free + forced, -1, -2)


def loss_pred(d, batch):
    """Mean over the batch of ||z_{t+1} - step(z_t, u_t)||^2."""
    batch.require_nonempty()
    r = batch.z_next - step(d, batch.z, batch.u)
    return float(np.sum(np.abs(r) ** 2) / len(batch))


@dataclass
class KoopmanGrads:
    mu: np.ndarray
    omega: np.ndarray
    L: np.ndarray
    dt: float = 0.0
    extra: dict = field(default_factory=dict)

    def scale(self, s):
        return KoopmanGrads(self.mu * s, self.omega * s, self.L * s, self.dt * s,
                            {k: v * s for k, v in self.extra.items()})


def chain_to_parameters(K, g_lambda_bar, g_control_bar):
    """Map packed gradients on (lambda_bar, L_bar) to (mu, omega, L, dt)."""
    lam = K.eigenvalues
    lam_bar = np.exp(lam * K.dt)
    phi = _phi(lam, K.dt)
    dphi = _phi_prime(lam, lam_bar, phi, K.dt)
    g_lb = np.asarray(g_lambda_bar, dtype=np.complex128)
    g_cb = np.asarray(g_control_bar, dtype=np.complex128)

    # dl/dphi_i summed over the input columns
    g_phi = np.sum(g_cb * np.conj(K.L), axis=1)
    dl_dlam = np.conj(g_lb) * K.dt * lam_bar + np.conj(g_phi) * dphi
    g_mu = np.real(dl_dlam)
    g_omega = np.real(1j * dl_dlam)
    g_L = g_cb * np.conj(phi)[:, None]
    g_dt = np.sum(np.real(np.conj(g_lb) * lam * lam_bar)) + np.sum(np.real(np.conj(g_phi) * lam_bar))
    return KoopmanGrads(g_mu, g_omega, g_L, float(g_dt))


def grad_pred(K, batch, d=None):
    """Gradient of loss_pred with respect to mu, omega, L, dt and the batch latents (z, z_next)."""
    batch.require_nonempty()
    if d is None:
        d = discretize(K)

    n = len(batch)
    r = batch.z_next - step(d, batch.z, batch.u)
    g_r = 2.0 * r / n
    g_lb = -np.sum(g_r * np.conj(batch.z), axis=0)
    g_cb = -(g_r.T @ batch.u)
    grads = chain_to_parameters(K, g_lb, g_cb)
    grads.extra = {"z": -np.conj(d.lambda_bar) * g_r, "z_next": g_r,
                   "loss": float(np.sum(np.abs(r) ** 2) / n)}
    return grads


def horizon_loss(K, z0, controls, targets, d=None):
    """Multi-step prediction loss (1/(N*H)) sum ||z_hat_k - target_k||^2 and its gradients.

    The forward pass uses predict_parallel; the backward pass runs the adjoint recursion
    a_k = g_k + conj(lambda_bar) a_{k+1} from the last step down. Gradients for z0 and the
    targets are returned in extra.
    """
    if d is None:
        d = discretize(K)

    z0 = np.atleast_2d(np.asarray(z0, dtype=np.complex128))
    controls = np.asarray(controls, dtype=float)
    targets = np.asarray(targets, dtype=np.complex128)
    if z0.shape[0] == 0:
        raise EmptyInputError("horizon batch is empty")

    n, H = controls.shape[0], controls.shape[1]
    z_hat = predict_parallel(d, z0, controls)
    if targets.shape != z_hat.shape:
        raise SizeError("targets shape " + str(targets.shape) + " does not match predictions " + str(z_hat.shape))

    resid = z_hat - targets
    loss = float(np.sum(np.abs(resid) ** 2) / (n * H))
    g = 2.0 * resid / (n * H)
    prev = np.concatenate([z0[:, None, :], z_hat[:, :-1, :]], axis=1)

    a = np.zeros_like(g)
    acc = np.zeros_like(z0)
    for k in range(H - 1, -1, -1):
        acc = g[:, k, :] + np.conj(d.lambda_bar) * acc
        a[:, k, :] = acc

    g_lb = np.sum(a * np.conj(prev), axis=(0, 1))
    g_cb = np.einsum("nki,nkj->ij", a, controls)
    grads = chain_to_parameters(K, g_lb, g_cb)
    grads.extra = {"z0": np.conj(d.lambda_bar) * a[:, 0, :], "targets": -g, "loss": loss}
    return loss, grads


def lemma1_ratio(K, j, batch):
    """Observed ||dl/dz_t|| / ||dl/dz_{t+1}|| for mode j, next to the predicted e^{dt*mu_j}.

    Uses l = mean ||step(z_t, u_t) - z_{t+1}||^2 with z_{t+1} the prediction, so the gradient at z_t
    arrives only through the one-step recursion.
    """
    batch.require_nonempty()
    d = discretize(K)
    pred = step(d, batch.z, batch.u)
    g_next = 2.0 * (pred - batch.z_next) / len(batch)
    g_t = step_backward(d, g_next)[0]
    den = np.linalg.norm(g_next[:, j])
    if den < 1e-300:
        raise DegenerateGradientError("gradient at z_{t+1} vanishes for mode " + str(j))

    observed = float(np.linalg.norm(g_t[:, j]) / den)
    predicted = float(np.exp(K.dt * K.mu[j]) * abs(np.exp(1j * K.dt * K.omega[j])))
    logging.debug("mode " + str(j) + " backward ratio " + "{:.6f}".format(observed) + " predicted "
                  + "{:.6f}".format(predicted))
    return observed, predicted


def as_real(z):
    z = np.asarray(z)
    return np.concatenate([z.real, z.imag], axis=-1)


def as_complex(x):
    x = np.asarray(x, dtype=float)
    m = x.shape[-1] // 2
    return x[..., :m] + 1j * x[..., m:]


def real_block_form(d):
    """Real 2m x 2m / 2m x u matrices acting on [Re z; Im z]."""
    a, b = d.lambda_bar.real, d.lambda_bar.imag
    A = np.block([[np.diag(a), -np.diag(b)], [np.diag(b), np.diag(a)]])
    B = np.vstack([d.control_bar.real, d.control_bar.imag])
    return A, B


def continuous_block_form(K):
    A = np.block([[np.diag(K.mu), -np.diag(K.omega)], [np.diag(K.omega), np.diag(K.mu)]])
    B = np.vstack([K.L.real, K.L.imag])
    return A, B


def block_grads_to_spectral(gA, gB):
    """Restrict gradients on the real block matrices to the diagonal-complex parameterization."""
    m = gB.shape[0] // 2
    g_lb = (np.diag(gA[:m, :m]) + np.diag(gA[m:, m:])) + 1j * (np.diag(gA[m:, :m]) - np.diag(gA[:m, m:]))
    g_cb = gB[:m] + 1j * gB[m:]
    return g_lb, g_cb

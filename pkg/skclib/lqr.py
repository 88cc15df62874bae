"""Riccati machinery on real state-space pairs (A, B).

Complex spectral models enter through their real block form (see spectral.real_block_form); Q and R
are diagonal and given in that real embedding.
"""

from dataclasses import dataclass, field
import logging

import numpy as np
import pandas as pd
from scipy.linalg import solve_discrete_lyapunov

from skclib.errors import NonConvergenceError, SizeError
from skclib.linalg_core import solve_linear, symmetrize
from skclib.spectral import as_real


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class CostWeights:
    q_diag: np.ndarray
    r_diag: np.ndarray

    def __post_init__(self):
        self.q_diag = np.atleast_1d(np.asarray(self.q_diag, dtype=float))
        self.r_diag = np.atleast_1d(np.asarray(self.r_diag, dtype=float))
        if np.any(self.q_diag < 0):
            raise ValueError("Q diagonal must be non-negative")

        if np.any(self.r_diag <= 0):
            raise ValueError("R diagonal must be strictly positive")

    @property
    def Q(self):
        return np.diag(self.q_diag)

    @property
    def R(self):
        return np.diag(self.r_diag)

    @classmethod
    def default(cls, n, u, q=1.0, r=0.1):
        return cls(np.full(n, q), np.full(u, r))

    # learnable form: q = softplus(q_raw), r = exp(r_raw)
    @classmethod
    def from_raw(cls, q_raw, r_raw):
        return cls(softplus(np.asarray(q_raw, dtype=float)), np.exp(np.asarray(r_raw, dtype=float)))

    def to_raw(self):
        q = np.maximum(self.q_diag, 1e-12)
        return np.log(np.expm1(q)), np.log(self.r_diag)

    def to_dict(self):
        return {"q_diag": self.q_diag.tolist(), "r_diag": self.r_diag.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["q_diag"], d["r_diag"])


def raw_weight_grads(q_raw, r_raw, g_q, g_r):
    """Chain diagonal gradients through the softplus/exp parameterization."""
    return g_q * sigmoid(q_raw), g_r * np.exp(r_raw)


@dataclass
class LqrSolution:
    P: np.ndarray
    G: np.ndarray
    iterates: int
    residual: float
    history: list = field(default_factory=list)
    closed_loop_radius: float = float("nan")
    converged: bool = False

    def history_frame(self):
        rows = [(i + 1, d, t) for i, (d, t) in enumerate(self.history)]
        return pd.DataFrame(rows, columns=["iter", "frobenius_delta", "trace_P"])


def _check_system(A, B, w):
    A = np.array(A, dtype=float, ndmin=2)
    B = np.array(B, dtype=float, ndmin=2)
    n, u = B.shape
    if A.shape != (n, n):
        raise SizeError("A is " + str(A.shape) + " but B has " + str(n) + " rows")

    if w.q_diag.size != n or w.r_diag.size != u:
        raise SizeError("weights are sized (" + str(w.q_diag.size) + ", " + str(w.r_diag.size) + "), system is ("
                        + str(n) + ", " + str(u) + ")")

    return A, B


def gain(P, A, B, R):
    """G = (R + B^T P B)^{-1} B^T P A; the control law is u = -G (z - z_ref)."""
    P = np.array(P, dtype=float, ndmin=2)
    PB = P @ B
    return solve_linear(R + B.T @ PB, PB.T @ A)


def riccati_map(P, A, B, w):
    G = gain(P, A, B, w.R)
    return symmetrize(w.Q + A.T @ P @ A - A.T @ P @ B @ G), G


def closed_loop_radius(A, B, G, max_iters=200):
    """Spectral radius of A - B G by normalized repeated squaring.

    rho = lim ||M^(2^k)||^(1/2^k); each squaring is rescaled to unit norm and the log scale is
    accumulated, so the estimate neither overflows nor underflows. Exactly nilpotent maps give 0.
    """
    A = np.array(A, dtype=float, ndmin=2)
    M = A - np.array(B, dtype=float, ndmin=2) @ np.array(G, dtype=float, ndmin=2) if G is not None else A.copy()
    s = np.linalg.norm(M, 2)
    if s == 0.0:
        return 0.0

    M = M / s
    log_rho = np.log(s)
    weight = 1.0
    for _ in range(max_iters):
        M = M @ M
        s = np.linalg.norm(M, 2)
        if s == 0.0:
            return 0.0

        M = M / s
        weight *= 0.5
        inc = weight * np.log(s)
        log_rho += inc
        if abs(inc) < 1e-17:
            break

    return float(np.exp(log_rho))


def policy_cost_matrix(A, B, G, w):
    """Cost-to-go matrix of the fixed gain G: P = A_cl^T P A_cl + Q + G^T R G."""
    A_cl = A - B @ G
    return symmetrize(solve_discrete_lyapunov(A_cl.T, w.Q + G.T @ w.R @ G))


def overestimate_start(A, B, w, G=None):
    """P0 >= P* from a stabilizing gain (zero gain when A itself is stable)."""
    A, B = _check_system(A, B, w)
    if G is None:
        G = np.zeros((B.shape[1], A.shape[0]))

    if closed_loop_radius(A, B, G) >= 1.0:
        raise ValueError("overestimate start needs a stabilizing gain")

    return policy_cost_matrix(A, B, G, w)


def dare_iterate(A, B, w, tol=1e-10, max_iters=10000, P0=None, rel_tol=False):
    """Fixed-point iteration P <- Q + A^T P A - A^T P B (R + B^T P B)^{-1} B^T P A.

    Starts from P0 = Q unless P0 is given; a stabilizing overestimate P0 >= P* makes trace(P_i)
    non-increasing. P is symmetrized after each map. With rel_tol the stopping threshold is
    tol * max(1, ||P||_F).
    """
    A, B = _check_system(A, B, w)
    P = w.Q.copy() if P0 is None else symmetrize(np.array(P0, dtype=float))
    history = []
    converged = False
    for _ in range(max_iters):
        P_next = riccati_map(P, A, B, w)[0]
        delta = float(np.linalg.norm(P_next - P))
        history.append((delta, float(np.trace(P_next))))
        P = P_next
        if not np.all(np.isfinite(P)):
            break

        if delta <= (tol * max(1.0, float(np.linalg.norm(P))) if rel_tol else tol):
            converged = True
            break

    if not converged:
        partial = LqrSolution(P, None, len(history), float("nan"), history, float("nan"), False)
        raise NonConvergenceError("Riccati iteration non-convergent after " + str(len(history))
                                  + " iterations (unstabilizable or tol too tight)", solution=partial)

    G = gain(P, A, B, w.R)
    residual = float(np.linalg.norm(P - riccati_map(P, A, B, w)[0]))
    radius = closed_loop_radius(A, B, G)
    sol = LqrSolution(P, G, len(history), residual, history, radius, True)
    if radius >= 1.0:
        sol.converged = False
        raise NonConvergenceError("Riccati iteration reached a non-stabilizing fixed point (closed-loop radius "
                                  + "{:.6f}".format(radius) + ")", solution=sol)

    logging.debug("DARE converged in " + str(sol.iterates) + " iterations, residual "
                  + "{:.3e}".format(residual) + ", closed-loop radius " + "{:.6f}".format(radius))
    return sol


@dataclass
class FiniteHorizonSolution:
    gains: list
    costs: list
    z_ref: np.ndarray = None

    def control(self, k, z):
        z_ref = 0.0 if self.z_ref is None else self.z_ref
        return -self.gains[k] @ (np.asarray(z) - z_ref)


def finite_horizon(A, B, w, z_ref=None, T=9):
    """Backward recursion from P_T = Q; returns gains G_0..G_{T-1} and cost matrices P_0..P_T."""
    if not 1 <= T <= 100:
        raise ValueError("finite horizon T must lie in [1, 100], got " + str(T))

    A, B = _check_system(A, B, w)
    P = w.Q.copy()
    gains, costs = [], [P]
    for _ in range(T):
        P, G = riccati_map(P, A, B, w)
        gains.append(G)
        costs.append(P)

    gains.reverse()
    costs.reverse()
    return FiniteHorizonSolution(gains, costs, None if z_ref is None else np.asarray(z_ref, dtype=float))


def finite_horizon_gap(A, B, w, T, sol=None):
    """||G_0(T) - G_dare||_F, the error of truncating the horizon at T."""
    if sol is None:
        sol = dare_iterate(A, B, w)

    return float(np.linalg.norm(finite_horizon(A, B, w, None, T).gains[0] - sol.G))


def lqr_cost(traj, w, z_ref=None, use="latents"):
    """sum_k (z_k - z_ref)^T Q (z_k - z_ref) + u_k^T R u_k over aligned pairs; reward is its negative."""
    z, u = traj.aligned(use)
    if np.iscomplexobj(z):
        z = as_real(z)

    e = z - (0.0 if z_ref is None else np.asarray(z_ref, dtype=float))
    return float(np.sum(e * e * w.q_diag) + np.sum(u * u * w.r_diag))


@dataclass
class DareGrads:
    A: np.ndarray
    B: np.ndarray
    q_diag: np.ndarray
    r_diag: np.ndarray


def dare_adjoint(A, B, w, sol, g_P=None, g_G=None):
    """Reverse-mode gradient of l(P*, G*) through the Riccati fixed point.

    Differentiating P = f(P) at the optimum gives dP = A_cl^T dP A_cl + S(dA, dB, dQ, dR), so the
    adjoint is the Lyapunov solution X = A_cl X A_cl^T + dl/dP (including the part of dl/dG that
    flows through P).
    """
    A, B = _check_system(A, B, w)
    n, u = B.shape
    P, G = sol.P, sol.G
    g_P = np.zeros((n, n)) if g_P is None else np.array(g_P, dtype=float)
    g_G = np.zeros((u, n)) if g_G is None else np.array(g_G, dtype=float)
    S = w.R + B.T @ P @ B
    Y = solve_linear(S, g_G)
    Z = Y @ G.T

    gA = P @ B @ Y
    gB = P @ A @ Y.T - P @ B @ (Z + Z.T)
    gR = -Z
    Pbar = symmetrize(g_P + B @ Y @ A.T - B @ Z @ B.T)

    A_cl = A - B @ G
    X = symmetrize(solve_discrete_lyapunov(A_cl, Pbar))
    M = 2.0 * P @ A_cl @ X
    gA = gA + M
    gB = gB - M @ G.T
    gR = gR + G @ X @ G.T
    return DareGrads(gA, gB, np.diag(X).copy(), np.diag(gR).copy())

"""LQR-conditioned soft actor-critic over a learned spectral Koopman latent space.

The policy mean is the LQR law -G (x - x_ref) in the real embedding x = [Re z; Im z], squashed by tanh
into the action box with learned homoscedastic Gaussian noise. Gradients of the SAC objective reach
the Koopman parameters and the Q/R diagonals through the Riccati fixed point (lqr.dare_adjoint).
"""

from dataclasses import asdict, dataclass, field, fields
import json
import logging
import math

import numpy as np
from scipy.stats import trim_mean

from skclib.encoder import (AugmentConfig, EncoderParams, contrastive_step_grads, ema_update, encoder_from_dict,
                            encoder_to_dict, grad_encoder)
from skclib.errors import ConfigError, EmptyInputError, NonConvergenceError
from skclib.lqr import CostWeights, dare_adjoint, dare_iterate, finite_horizon, raw_weight_grads
from skclib.nets import TanhMLP
from skclib.optim import Adam, pack_array, unpack_array
from skclib.spectral import (SpectralKoopman, as_real, block_grads_to_spectral, chain_to_parameters, discretize,
                             horizon_loss, real_block_form)
from skclib.sysid import INIT_PRESETS, init_spectrum

LOG_2PI = math.log(2.0 * math.pi)
SQUASH_EPS = 1e-6
CLIP_MARGIN = 1e-6
MIN_DT = 1e-4


@dataclass
class AgentConfig:
    batch_size: int = 128
    gamma: float = 0.99
    init_alpha: float = 0.1
    alpha_lr: float = 1e-4
    alpha_beta: float = 0.5
    actor_lr: float = 1e-3
    actor_beta: float = 0.9
    actor_update_freq: int = 1
    critic_lr: float = 1e-3
    critic_beta: float = 0.9
    critic_tau: float = 0.01
    critic_target_update_freq: int = 1
    encoder_lr: float = 1e-3
    encoder_tau: float = 0.05
    koopman_lr: float = 1e-3
    koopman_update_freq: int = 1
    koopman_coeff: float = 0.1
    koopman_horizon: int = 5
    init_steps: int = 1000
    replay_capacity: int = 100000
    lambda_lqr: float = 0.5
    lqr_eval_horizon: int = 10
    hidden: int = 64
    m: int = 16
    critic_hidden: int = 64
    init_log_std: float = -1.0
    init_strategy: str = "constant_increasing"
    learn_dt: bool = True
    dt_lr_scale: float = 0.01
    q_init: float = 1.0
    r_init: float = 0.1
    dare_tol: float = 1e-6
    dare_max_iters: int = 2000
    fallback_horizon: int = 9
    augment_sigma: float = 0.05
    augment_mask: float = 0.1
    eigen_every: int = 1000

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        for k in d:
            if k not in names:
                raise ConfigError("agent." + k, "unknown agent setting")

        cfg = cls(**d)
        if not 0.0 < cfg.gamma < 1.0:
            raise ConfigError("agent.gamma", "must lie in (0, 1)")

        if cfg.init_alpha <= 0:
            raise ConfigError("agent.init_alpha", "must be positive")

        if cfg.dt_lr_scale < 0:
            raise ConfigError("agent.dt_lr_scale", "must be non-negative")

        if cfg.init_strategy not in INIT_PRESETS:
            raise ConfigError("agent.init_strategy", "unknown strategy '" + cfg.init_strategy + "'")

        return cfg


@dataclass
class ReplayBatch:
    obs: np.ndarray
    action: np.ndarray
    reward: np.ndarray
    next_obs: np.ndarray
    done: np.ndarray


class ReplayBuffer(object):
    """Ring buffer of transitions tagged with an episode id and a global insertion number."""

    def __init__(self, capacity, obs_dim, action_dim):
        self.capacity = int(capacity)
        self.obs = np.zeros((self.capacity, obs_dim))
        self.next_obs = np.zeros((self.capacity, obs_dim))
        self.action = np.zeros((self.capacity, action_dim))
        self.reward = np.zeros(self.capacity)
        self.done = np.zeros(self.capacity)
        self.episode = np.full(self.capacity, -1, dtype=np.int64)
        self.seq = np.full(self.capacity, -1, dtype=np.int64)
        self.size = 0
        self.total = 0

    def __len__(self):
        return self.size

    def add(self, obs, action, reward, next_obs, done, episode=0):
        i = self.total % self.capacity
        self.obs[i] = obs
        self.action[i] = action
        self.reward[i] = reward
        self.next_obs[i] = next_obs
        self.done[i] = float(done)
        self.episode[i] = episode
        self.seq[i] = self.total
        self.total += 1
        self.size = min(self.size + 1, self.capacity)

    def _batch(self, idx):
        return ReplayBatch(self.obs[idx], self.action[idx], self.reward[idx], self.next_obs[idx], self.done[idx])

    def sample(self, batch_size, rng):
        """Uniform draw without replacement."""
        if batch_size > self.size:
            raise EmptyInputError("replay holds " + str(self.size) + " transitions, batch needs " + str(batch_size))

        return self._batch(rng.choice(self.size, batch_size, replace=False))

    def sample_sequences(self, batch_size, horizon, rng):
        """Start indices of `horizon` consecutive transitions within one episode.

        Returns (obs_t, controls (B, H, u), next observations (B, H, d_obs)).
        """
        pos = np.arange(self.size)
        end = (pos + horizon - 1) % self.capacity
        valid = pos[(self.seq[pos] + horizon - 1 < self.total) & (self.seq[end] == self.seq[pos] + horizon - 1)
                    & (self.episode[end] == self.episode[pos])]
        if valid.size == 0:
            raise EmptyInputError("no complete sequences of length " + str(horizon) + " in replay")

        starts = rng.choice(valid, min(batch_size, valid.size), replace=False)
        idx = (starts[:, None] + np.arange(horizon)[None, :]) % self.capacity
        return self.obs[starts], self.action[idx], self.next_obs[idx]


@dataclass
class WarmStart:
    P: np.ndarray


@dataclass
class GainCache:
    G: np.ndarray
    sol: object
    A: np.ndarray
    B: np.ndarray
    fallback: bool
    version: int


@dataclass
class AgentState:
    cfg: AgentConfig
    encoder: EncoderParams
    koopman: SpectralKoopman
    q_raw: np.ndarray
    r_raw: np.ndarray
    critics: list
    critic_targets: list
    log_std: np.ndarray
    log_alpha: float
    a_min: np.ndarray
    a_max: np.ndarray
    goal_obs: np.ndarray
    replay: ReplayBuffer = None
    opts: dict = field(default_factory=dict)
    step: int = 0
    version: int = 0
    gains: GainCache = None
    episode: int = 0
    episode_reward: float = 0.0
    last_obs: np.ndarray = None

    @property
    def alpha(self):
        return math.exp(self.log_alpha)

    @property
    def weights(self):
        return CostWeights.from_raw(self.q_raw, self.r_raw)

    @property
    def bounds(self):
        return self.a_min, self.a_max

    @property
    def augment_cfg(self):
        return AugmentConfig(self.cfg.augment_sigma, self.cfg.augment_mask)

    def goal_latent(self):
        return self.encoder.key(self.goal_obs)[0]


def _make_opts(cfg):
    dt_scale = {"koop.log_dt": cfg.dt_lr_scale}
    return {"critic": Adam(cfg.critic_lr, cfg.critic_beta),
            "actor": Adam(cfg.actor_lr, cfg.actor_beta, lr_scale=dt_scale),
            "alpha": Adam(cfg.alpha_lr, cfg.alpha_beta), "encoder": Adam(cfg.encoder_lr, 0.9),
            "koopman": Adam(cfg.koopman_lr, 0.9, lr_scale=dt_scale)}


def init_agent(cfg, obs_dim, action_dim, bounds, goal_obs, dt, rng):
    enc = EncoderParams.init(obs_dim, cfg.hidden, cfg.m, rng)
    K = init_spectrum(INIT_PRESETS[cfg.init_strategy], cfg.m, rng, action_dim, dt)
    q_raw, r_raw = CostWeights.default(2 * cfg.m, action_dim, cfg.q_init, cfg.r_init).to_raw()
    width = 2 * cfg.m + action_dim
    critics = [TanhMLP([width, cfg.critic_hidden, cfg.critic_hidden, 1], rng) for _ in range(2)]
    a_min = np.broadcast_to(np.asarray(bounds[0], dtype=float), (action_dim,)).copy()
    a_max = np.broadcast_to(np.asarray(bounds[1], dtype=float), (action_dim,)).copy()
    return AgentState(cfg, enc, K, q_raw, r_raw, critics, [c.copy() for c in critics],
                      np.full(action_dim, cfg.init_log_std), math.log(cfg.init_alpha), a_min, a_max,
                      np.asarray(goal_obs, dtype=float), ReplayBuffer(cfg.replay_capacity, obs_dim, action_dim),
                      _make_opts(cfg))


def current_gains(state):
    """LQR gain of the current model and weights, recomputed only after parameters changed.

    The DARE is warm-started from the previous solution; on non-convergence the first gain of the
    finite-horizon recursion (T = fallback_horizon) is used and the cache is flagged.
    """
    if state.gains is not None and state.gains.version == state.version:
        return state.gains

    A, B = real_block_form(discretize(state.koopman))
    w = state.weights
    warm = None
    if state.gains is not None:
        warm = state.gains.sol.P if state.gains.sol is not None else None

    try:
        sol = dare_iterate(A, B, w, tol=state.cfg.dare_tol, max_iters=state.cfg.dare_max_iters, P0=warm, rel_tol=True)
        state.gains = GainCache(sol.G, sol, A, B, False, state.version)
    except NonConvergenceError as e:
        logging.warning("DARE did not converge at step " + str(state.step) + "; using finite-horizon gains (T="
                        + str(state.cfg.fallback_horizon) + ")")
        fh = finite_horizon(A, B, w, None, state.cfg.fallback_horizon)
        warm = None
        if e.solution is not None and np.all(np.isfinite(e.solution.P)):
            # next warm start only; fallback gains are never differentiated
            warm = WarmStart(e.solution.P)

        state.gains = GainCache(fh.gains[0], warm, A, B, True, state.version)

    return state.gains


def action_scale(a_min, a_max):
    return 0.5 * (a_max + a_min), 0.5 * (a_max - a_min)


def lqr_mean(G, x, x_ref):
    return -(np.atleast_2d(x) - x_ref) @ G.T


def squash_forward(a, log_std, a_min, a_max, eps):
    """u = c + h tanh(atanh((a - c)/h) + sigma*eps) and its log-density."""
    c, h = action_scale(a_min, a_max)
    s = (a - c) / h
    inside = np.abs(s) < 1.0 - CLIP_MARGIN
    sc = np.clip(s, -(1.0 - CLIP_MARGIN), 1.0 - CLIP_MARGIN)
    sigma = np.exp(log_std)
    y = np.arctanh(sc) + sigma * eps
    t = np.tanh(y)
    logp = np.sum(-0.5 * eps ** 2 - log_std - 0.5 * LOG_2PI - np.log(h) - np.log(1.0 - t ** 2 + SQUASH_EPS), axis=1)
    return c + h * t, logp, {"sc": sc, "inside": inside, "sigma": sigma, "t": t, "eps": eps, "h": h}


def squash_backward(cache, du, dlogp):
    """Returns (dL/da, dL/dlog_std) given dL/du and dL/dlogp."""
    t, h = cache["t"], cache["h"]
    one_m = 1.0 - t ** 2
    dy = dlogp[:, None] * (2.0 * t * one_m / (one_m + SQUASH_EPS)) + du * h * one_m
    d_log_std = np.sum(dy * cache["sigma"] * cache["eps"], axis=0) - np.sum(dlogp)
    da = dy / (1.0 - cache["sc"] ** 2) * cache["inside"] / h
    return da, d_log_std


def policy_action(G, x, x_ref, log_std, a_min, a_max, deterministic, rng=None):
    """Action for one or more latents; deterministic mode uses zero noise."""
    a = lqr_mean(G, x, x_ref)
    eps = np.zeros_like(a) if deterministic else rng.normal(size=a.shape)
    u, logp, _ = squash_forward(a, log_std, a_min, a_max, eps)
    return u, logp


def sample_action(state, z, z_ref, deterministic, rng=None):
    x = as_real(z) if np.iscomplexobj(z) else np.asarray(z, dtype=float)
    x_ref = as_real(z_ref) if np.iscomplexobj(z_ref) else np.asarray(z_ref, dtype=float)
    gains = current_gains(state)
    u, _ = policy_action(gains.G, x, x_ref, state.log_std, state.a_min, state.a_max, deterministic, rng)
    return u[0] if np.ndim(x) == 1 else u


def _critic_forward(critics, x, u):
    inp = np.hstack([x, u])
    return [c.forward(inp) for c in critics]


def critic_loss_grads(critics, x, u, y):
    """sum_i mean (Q_i(x, u) - y)^2 and per-critic parameter gradients."""
    n = len(y)
    loss = 0.0
    grads = []
    for c, (q, inputs) in zip(critics, _critic_forward(critics, x, u)):
        r = q[:, 0] - y
        loss += float(np.mean(r ** 2))
        grads.append(c.backward(inputs, (2.0 * r / n)[:, None])[1])

    return loss, grads


def critic_targets(state, batch, eps_next):
    """r + gamma (1 - done) (min target Q(x', u') - alpha log pi(u'|x')), with x' from the key encoder."""
    x_next = state.encoder.key(batch.next_obs)
    gains = current_gains(state)
    u_next, logp_next, _ = squash_forward(lqr_mean(gains.G, x_next, state.goal_latent()), state.log_std,
                                          state.a_min, state.a_max, eps_next)
    q_next = np.minimum(*[q[:, 0] for q, _ in _critic_forward(state.critic_targets, x_next, u_next)])
    return batch.reward + state.cfg.gamma * (1.0 - batch.done) * (q_next - state.alpha * logp_next)


def _named(prefix, d):
    return {prefix + k: v for k, v in d.items()}


def _step_nets(opt, nets, grads_list, prefix):
    params = {}
    grads = {}
    for i, (net, g) in enumerate(zip(nets, grads_list)):
        params.update(_named(prefix + str(i) + ".", net.params))
        grads.update(_named(prefix + str(i) + ".", g))

    params = opt.step(params, grads)
    for i, net in enumerate(nets):
        p = prefix + str(i) + "."
        net.params = {k[len(p):]: v for k, v in params.items() if k.startswith(p)}


def critic_update(state, batch, rng):
    y = critic_targets(state, batch, rng.normal(size=batch.action.shape))
    x = state.encoder.query(batch.obs)
    loss, grads = critic_loss_grads(state.critics, x, batch.action, y)
    _step_nets(state.opts["critic"], state.critics, grads, "critic")
    if state.step % state.cfg.critic_target_update_freq == 0:
        for tgt, src in zip(state.critic_targets, state.critics):
            tgt.ema_from(src, state.cfg.critic_tau)

    return loss


@dataclass
class ActorGrads:
    loss: float
    logp_mean: float
    log_std: np.ndarray
    q_raw: np.ndarray
    r_raw: np.ndarray
    koopman: object
    encoder: dict


def actor_objective(state, obs, eps, gains=None, dare_tol=1e-12):
    """L_actor = mean(alpha log pi(u|x) - min_i Q_i(x, u)) with u reparameterized through the LQR mean.

    Gradients are exact for every parameter the objective touches: log_std, the Q/R raw diagonals and
    the Koopman parameters (through the Riccati fixed point), and the query encoder (through both the
    critic input and the LQR mean). With gains=None the Riccati equation is solved afresh.
    """
    if gains is None:
        A, B = real_block_form(discretize(state.koopman))
        sol = dare_iterate(A, B, state.weights, tol=dare_tol, max_iters=100000)
        gains = GainCache(sol.G, sol, A, B, False, state.version)

    n = len(obs)
    x, enc_inputs = state.encoder.query.forward(obs)
    x_ref = state.goal_latent()
    G = gains.G
    a = lqr_mean(G, x, x_ref)
    u, logp, cache = squash_forward(a, state.log_std, state.a_min, state.a_max, eps)
    (q1, in1), (q2, in2) = _critic_forward(state.critics, x, u)
    pick = q1[:, 0] <= q2[:, 0]
    qmin = np.where(pick, q1[:, 0], q2[:, 0])
    alpha = state.alpha
    loss = float(np.mean(alpha * logp - qmin))

    w1 = pick.astype(float)
    d1 = state.critics[0].backward(in1, (-w1 / n)[:, None])[0]
    d2 = state.critics[1].backward(in2, (-(1.0 - w1) / n)[:, None])[0]
    d_inp = d1 + d2
    k = x.shape[1]
    da, d_log_std = squash_backward(cache, d_inp[:, k:], np.full(n, alpha / n))
    dx = d_inp[:, :k] - da @ G
    enc_grads = grad_encoder(state.encoder, obs, {"task": dx})

    koop = None
    g_q = np.zeros_like(state.q_raw)
    g_r = np.zeros_like(state.r_raw)
    if not gains.fallback:
        dG = -da.T @ (x - x_ref)
        adj = dare_adjoint(gains.A, gains.B, state.weights, gains.sol, g_G=dG)
        g_lb, g_cb = block_grads_to_spectral(adj.A, adj.B)
        koop = chain_to_parameters(state.koopman, g_lb, g_cb)
        g_q, g_r = raw_weight_grads(state.q_raw, state.r_raw, adj.q_diag, adj.r_diag)

    return ActorGrads(loss, float(np.mean(logp)), d_log_std, g_q, g_r, koop, enc_grads)


def lqr_regularizer(A, B, G, x0, horizon, q_eval, r_eval):
    """Mean closed-loop model rollout cost from start errors x0 under u = -G e, and dJ/dG.

    e_{k+1} = (A - B G) e_k, J = mean_n sum_{k<horizon} e_k^T (Q_e + G^T R_e G) e_k.
    """
    n = len(x0)
    A_cl = A - B @ G
    M = np.diag(q_eval) + G.T @ np.diag(r_eval) @ G
    es = [np.atleast_2d(x0)]
    for _ in range(horizon - 1):
        es.append(es[-1] @ A_cl.T)

    J = float(sum(np.sum((e @ M) * e) for e in es) / n)
    S = sum(e.T @ e for e in es) / n
    dG = 2.0 * np.diag(r_eval) @ G @ S
    a = 2.0 * es[-1] @ M / n
    dAcl = np.zeros_like(A_cl)
    for kk in range(horizon - 2, -1, -1):
        dAcl += a.T @ es[kk]
        a = 2.0 * es[kk] @ M / n + a @ A_cl

    dG -= B.T @ dAcl
    return J, dG


def lqr_regularizer_grads(state, x0, gains):
    """J_LQR with fixed evaluation weights Q_e = I, R_e = 0.1 I; gradients reach only the Q/R raw diagonals."""
    k = x0.shape[1]
    u = state.log_std.size
    J, dG = lqr_regularizer(gains.A, gains.B, gains.G, x0, state.cfg.lqr_eval_horizon, np.ones(k), np.full(u, 0.1))
    if gains.fallback:
        return J, np.zeros_like(state.q_raw), np.zeros_like(state.r_raw)

    adj = dare_adjoint(gains.A, gains.B, state.weights, gains.sol, g_G=dG)
    g_q, g_r = raw_weight_grads(state.q_raw, state.r_raw, adj.q_diag, adj.r_diag)
    return J, g_q, g_r


def _koopman_params(K):
    # dt is stepped in log space
    return {"mu": K.mu, "omega": K.omega, "L": K.L, "log_dt": np.array([math.log(K.dt)])}


def _set_koopman(K, params, learn_dt):
    K.mu = params["mu"]
    K.omega = params["omega"]
    K.L = params["L"]
    if learn_dt and params["log_dt"][0] != math.log(K.dt):
        K.dt = float(max(math.exp(params["log_dt"][0]), MIN_DT))

    K.project()


def _koopman_grads(g, dt, learn_dt):
    return {"mu": g.mu, "omega": g.omega, "L": g.L, "log_dt": np.array([g.dt * dt if learn_dt else 0.0])}


def actor_update(state, batch, rng):
    """One descent step on L_actor + lambda_lqr * J_LQR.

    Returns (L_actor, J_LQR, squared gradient norm, mean log pi of the sampled actions).
    """
    gains = current_gains(state)
    eps = rng.normal(size=batch.action.shape)
    ag = actor_objective(state, batch.obs, eps, gains)
    x0 = state.encoder.query(batch.obs) - state.goal_latent()
    J, jq, jr = lqr_regularizer_grads(state, x0, gains)
    lam = state.cfg.lambda_lqr

    grads = {"log_std": ag.log_std, "q_raw": ag.q_raw + lam * jq, "r_raw": ag.r_raw + lam * jr}
    grads.update(_named("enc.", ag.encoder))
    if ag.koopman is not None:
        grads.update(_named("koop.", _koopman_grads(ag.koopman, state.koopman.dt, state.cfg.learn_dt)))

    params = {"log_std": state.log_std, "q_raw": state.q_raw, "r_raw": state.r_raw}
    params.update(_named("enc.", state.encoder.query.params))
    params.update(_named("koop.", _koopman_params(state.koopman)))
    params = state.opts["actor"].step(params, grads)

    state.log_std = params["log_std"]
    state.q_raw = params["q_raw"]
    state.r_raw = params["r_raw"]
    state.encoder.query.params = {k[4:]: v for k, v in params.items() if k.startswith("enc.")}
    _set_koopman(state.koopman, {k[5:]: v for k, v in params.items() if k.startswith("koop.")}, state.cfg.learn_dt)
    state.version += 1
    gsq = sum(float(np.sum(np.abs(g) ** 2)) for g in grads.values())
    return ag.loss, J, gsq, ag.logp_mean


def temperature_grad(log_alpha, logp, target_entropy):
    """d/dlog_alpha of mean(-alpha (log pi + H_target))."""
    return -math.exp(log_alpha) * float(np.mean(logp + target_entropy))


def temperature_update(state, logp_mean):
    """Temperature step on the log-probabilities of the actor update's own action samples."""
    g = temperature_grad(state.log_alpha, logp_mean, -float(state.log_std.size))
    out = state.opts["alpha"].step({"log_alpha": np.array([state.log_alpha])}, {"log_alpha": np.array([g])})
    state.log_alpha = float(out["log_alpha"][0])
    return state.alpha


def contrastive_update(state, batch, rng):
    loss, grads, dW = contrastive_step_grads(state.encoder, batch.obs, state.augment_cfg, rng)
    params = dict(state.encoder.query.params, W_bil=state.encoder.W)
    grads = dict(grads, W_bil=dW)
    params = state.opts["encoder"].step(params, grads)
    state.encoder.W = params.pop("W_bil")
    state.encoder.query.params = params
    return loss


def prediction_update(state, rng):
    """Koopman horizon-prediction step: query latents at t, key-encoder targets at t+1..t+H."""
    cfg = state.cfg
    obs0, controls, next_obs = state.replay.sample_sequences(cfg.batch_size, cfg.koopman_horizon, rng)
    out0, inputs = state.encoder.query.forward(obs0)
    m = state.koopman.m
    z0 = out0[:, :m] + 1j * out0[:, m:]
    flat_next = state.encoder.key(next_obs.reshape(-1, next_obs.shape[-1]))
    targets = (flat_next[:, :m] + 1j * flat_next[:, m:]).reshape(len(obs0), cfg.koopman_horizon, m)
    loss, g = horizon_loss(state.koopman, z0, controls, targets)
    c = cfg.koopman_coeff
    enc = state.encoder.query.backward(inputs, c * as_real(g.extra["z0"]))[1]

    params = _named("enc.", state.encoder.query.params)
    params.update(_named("koop.", _koopman_params(state.koopman)))
    grads = _named("enc.", enc)
    grads.update(_named("koop.", _koopman_grads(g.scale(c), state.koopman.dt, cfg.learn_dt)))
    params = state.opts["koopman"].step(params, grads)
    state.encoder.query.params = {k[4:]: v for k, v in params.items() if k.startswith("enc.")}
    _set_koopman(state.koopman, {k[5:]: v for k, v in params.items() if k.startswith("koop.")}, cfg.learn_dt)
    state.version += 1
    return loss


class RunRecord(object):
    """Append-only per-step log; mirrored line by line to a JSON-lines file when a path is given."""

    def __init__(self, path=None):
        self.entries = []
        self.path = path
        if path is not None:
            open(path, 'w').close()

    def append(self, entry):
        if self.entries and entry["step"] <= self.entries[-1]["step"]:
            raise ValueError("run record steps must be strictly increasing")

        self.entries.append(entry)
        if self.path is not None:
            with open(self.path, 'a') as fp:
                fp.write(json.dumps(entry, sort_keys=True) + "\n")

    def __len__(self):
        return len(self.entries)

    def series(self, key):
        return [e[key] for e in self.entries if e.get(key) is not None]

    @classmethod
    def load(cls, path):
        rec = cls()
        with open(path) as fp:
            for line in fp:
                if line.strip():
                    rec.entries.append(json.loads(line))

        return rec


def theorem4_diagnostic(record, window):
    """Windowed means of the logged squared gradient norm; converging iff the last mean <= the first.

    Windows tile the series from the start; when a partial window is left over, one more mean over
    the last `window` entries is appended, so the final mean always covers the most recent steps.
    """
    series = record.series("grad_sq") if isinstance(record, RunRecord) else list(record)
    if window < 1 or len(series) < 2 * window:
        raise EmptyInputError("need at least " + str(2 * max(window, 1)) + " logged gradient norms, have "
                              + str(len(series)))

    n_win = len(series) // window
    means = [float(np.mean(series[i * window:(i + 1) * window])) for i in range(n_win)]
    if len(series) % window:
        means.append(float(np.mean(series[-window:])))

    return {"window": window, "window_means": means, "first": means[0], "last": means[-1],
            "consistent_with_convergence": bool(means[-1] <= means[0])}


def _random_action(state, rng):
    return rng.uniform(state.a_min, state.a_max)


def train_step(state, env, rng, aug_rng=None):
    """One environment interaction followed, after warm-up, by the critic, actor, temperature,
    contrastive and Koopman prediction updates and the key-encoder EMA. Returns the record entry."""
    cfg = state.cfg
    aug_rng = rng if aug_rng is None else aug_rng
    if state.last_obs is None:
        state.last_obs = env.reset()

    obs = state.last_obs
    fell_back = False
    if state.step < cfg.init_steps:
        action = _random_action(state, rng)
    else:
        z = state.encoder.query(obs)[0]
        action = sample_action(state, z, state.goal_latent(), False, rng)
        fell_back = state.gains.fallback

    next_obs, reward, done = env.step(action)
    state.replay.add(obs, action, reward, next_obs, done, state.episode)
    state.episode_reward += reward
    entry = {"step": state.step, "reward": float(reward), "episode_reward": None, "L_critic": None, "L_sac": None,
             "J_lqr": None, "L_cst": None, "L_pred": None, "alpha": state.alpha, "grad_sq": None, "fallback": False}
    if done:
        entry["episode_reward"] = float(state.episode_reward)
        state.episode += 1
        state.episode_reward = 0.0
        state.last_obs = env.reset()
    else:
        state.last_obs = next_obs

    if state.step >= cfg.init_steps and len(state.replay) >= cfg.batch_size:
        batch = state.replay.sample(cfg.batch_size, rng)
        entry["L_critic"] = critic_update(state, batch, rng)
        if state.step % cfg.actor_update_freq == 0:
            entry["L_sac"], entry["J_lqr"], entry["grad_sq"], logp_mean = actor_update(state, batch, rng)
            entry["alpha"] = temperature_update(state, logp_mean)

        entry["L_cst"] = contrastive_update(state, batch, aug_rng)
        if state.step % cfg.koopman_update_freq == 0:
            entry["L_pred"] = prediction_update(state, rng)

        state.encoder.key = ema_update(state.encoder.key, state.encoder.query, cfg.encoder_tau)
        fell_back = fell_back or state.gains.fallback

    entry["fallback"] = bool(fell_back)
    if cfg.eigen_every and state.step % cfg.eigen_every == 0:
        entry["eigen"] = state.koopman.eigen_snapshot(state.step)

    state.step += 1
    return entry


def train(state, env, steps, rng, aug_rng=None, record=None, on_checkpoint=None, checkpoint_every=1000):
    record = RunRecord() if record is None else record
    for _ in range(steps):
        record.append(train_step(state, env, rng, aug_rng))
        if on_checkpoint is not None and state.step % checkpoint_every == 0:
            on_checkpoint(state)

    return record


def evaluate_policy(state, env, episodes, deterministic=True, rng=None):
    """Episode returns of the current policy (goal latent from the key encoder)."""
    returns = []
    z_ref = state.goal_latent()
    for _ in range(episodes):
        obs = env.reset()
        total, done = 0.0, False
        while not done:
            a = sample_action(state, state.encoder.query(obs)[0], z_ref, deterministic, rng)
            obs, r, done = env.step(a)
            total += r

        returns.append(total)

    return returns


def summarize_returns(returns):
    r = np.asarray(returns, dtype=float)
    q1, q3 = np.percentile(r, [25, 75])
    return {"mean": float(np.mean(r)), "iqm": float(trim_mean(r, 0.25)), "median": float(np.median(r)),
            "q1": float(q1), "q3": float(q3), "n": int(r.size)}


def agent_to_dict(state):
    return {"config": asdict(state.cfg), "encoder": encoder_to_dict(state.encoder, state.augment_cfg),
            "koopman": state.koopman.to_dict(), "q_raw": state.q_raw.tolist(), "r_raw": state.r_raw.tolist(),
            "critics": [c.to_dict() for c in state.critics],
            "critic_targets": [c.to_dict() for c in state.critic_targets],
            "log_std": state.log_std.tolist(), "log_alpha": state.log_alpha, "step": state.step,
            "a_min": state.a_min.tolist(), "a_max": state.a_max.tolist(), "goal_obs": pack_array(state.goal_obs)}


def agent_from_dict(d):
    cfg = AgentConfig.from_dict(d["config"])
    enc, _ = encoder_from_dict(d["encoder"])
    state = AgentState(cfg, enc, SpectralKoopman.from_dict(d["koopman"]), np.asarray(d["q_raw"]),
                       np.asarray(d["r_raw"]), [TanhMLP.from_dict(c) for c in d["critics"]],
                       [TanhMLP.from_dict(c) for c in d["critic_targets"]], np.asarray(d["log_std"]),
                       float(d["log_alpha"]), np.asarray(d["a_min"]), np.asarray(d["a_max"]),
                       unpack_array(d["goal_obs"]), None, _make_opts(cfg), int(d["step"]))
    state.replay = ReplayBuffer(cfg.replay_capacity, enc.d_obs, state.log_std.size)
    return state


def save_agent(state, path):
    with open(path, 'w') as fp:
        json.dump(agent_to_dict(state), fp)


def load_agent(path):
    with open(path) as fp:
        return agent_from_dict(json.load(fp))

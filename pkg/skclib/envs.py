"""Simulated control tasks integrated with RK4: mass-spring-damper, pendulum, cartpole swingup.

Rewards are the negative stage cost in environment state space; angle coordinates are wrapped to
(-pi, pi] before the cost is taken.
"""

from dataclasses import dataclass, field, replace
import math
import zlib

import numpy as np
from scipy.linalg import expm

from skclib.errors import ConfigError, SimulationBlowupError


@dataclass
class EnvSpec:
    name: str
    model: str
    state_dim: int
    action_dim: int
    a_min: float
    a_max: float
    dt: float
    params: dict
    goal: tuple
    q_env: tuple
    r_env: tuple
    episode_length: int
    init_low: tuple
    init_high: tuple
    angle_dims: tuple = ()
    d_obs: int = 32

    def __post_init__(self):
        if not self.a_min < self.a_max:
            raise ConfigError("env.a_min", "must be below a_max")

        if not self.dt > 0:
            raise ConfigError("env.dt", "must be positive")

        if min(self.q_env) < 0:
            raise ConfigError("env.q_env", "entries must be non-negative")

        if min(self.r_env) <= 0:
            raise ConfigError("env.r_env", "entries must be positive")


@dataclass
class NoiseConfig:
    obs_sigma: float = 0.0
    process_sigma: float = 0.0

    def __post_init__(self):
        if self.obs_sigma < 0 or self.process_sigma < 0:
            raise ConfigError("noise", "sigmas must be non-negative")


@dataclass
class DisturbanceConfig:
    p: float = 0.0
    mode: str = "three_point"

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ConfigError("disturbance.p", "must lie in [0, 1], got " + str(self.p))


ENV_SPECS = {
    "msd": EnvSpec("msd", "msd", 2, 1, -2.0, 2.0, 0.05, {"k": 1.0, "c": 0.2, "m": 1.0},
                   (0.0, 0.0), (1.0, 0.1), (0.01,), 200, (-1.0, -0.5), (1.0, 0.5)),
    "pendulum": EnvSpec("pendulum", "pendulum", 2, 1, -2.0, 2.0, 0.05, {"m": 1.0, "l": 1.0, "g": 9.81, "b": 0.1},
                        (0.0, 0.0), (1.0, 0.1), (0.001,), 200, (-0.2, -0.1), (0.2, 0.1), angle_dims=(0,)),
    "pendulum_swingup": EnvSpec("pendulum_swingup", "pendulum", 2, 1, -2.0, 2.0, 0.05,
                                {"m": 1.0, "l": 1.0, "g": 9.81, "b": 0.1}, (0.0, 0.0), (1.0, 0.1), (0.001,), 200,
                                (math.pi - 0.1, -0.1), (math.pi + 0.1, 0.1), angle_dims=(0,)),
    "cartpole_swingup": EnvSpec("cartpole_swingup", "cartpole", 4, 1, -10.0, 10.0, 0.02,
                                {"m_c": 1.0, "m_p": 0.1, "l": 0.5, "g": 9.8}, (0.0, 0.0, 0.0, 0.0),
                                (0.1, 0.01, 1.0, 0.01), (0.0001,), 500,
                                (-0.1, -0.1, math.pi - 0.1, -0.1), (0.1, 0.1, math.pi + 0.1, 0.1), angle_dims=(2,)),
}


def make_spec(name, overrides=None):
    """EnvSpec by name with field overrides; keys of overrides['params'] update the physical parameters."""
    if name not in ENV_SPECS:
        raise ConfigError("env.name", "unknown environment '" + str(name) + "' (choose from "
                          + ", ".join(sorted(ENV_SPECS)) + ")")

    spec = ENV_SPECS[name]
    overrides = dict(overrides or {})
    params = dict(spec.params)
    params.update(overrides.pop("params", {}))
    for k in overrides:
        if not hasattr(spec, k):
            raise ConfigError("env." + k, "not an environment field")

    return replace(spec, params=params, **overrides)


def _msd(p, s, u):
    x, v = s
    return np.array([v, (-p["k"] * x - p["c"] * v + u[0]) / p["m"]])


def _pendulum(p, s, u):
    # theta measured from upright
    th, om = s
    ml2 = p["m"] * p["l"] ** 2
    return np.array([om, (p["g"] / p["l"]) * math.sin(th) - (p["b"] / ml2) * om + u[0] / ml2])


def _cartpole(p, s, u):
    x, xd, th, thd = s
    total = p["m_c"] + p["m_p"]
    pml = p["m_p"] * p["l"]
    sin, cos = math.sin(th), math.cos(th)
    temp = (u[0] + pml * thd ** 2 * sin) / total
    thdd = (p["g"] * sin - cos * temp) / (p["l"] * (4.0 / 3.0 - p["m_p"] * cos ** 2 / total))
    xdd = temp - pml * thdd * cos / total
    return np.array([xd, xdd, thd, thdd])


DYNAMICS = {"msd": _msd, "pendulum": _pendulum, "cartpole": _cartpole}


def dynamics(spec, state, action):
    return DYNAMICS[spec.model](spec.params, np.asarray(state, dtype=float), np.atleast_1d(action))


def rk4(spec, state, action, dt=None):
    h = spec.dt if dt is None else dt
    f = DYNAMICS[spec.model]
    p = spec.params
    s = np.asarray(state, dtype=float)
    u = np.atleast_1d(np.asarray(action, dtype=float))
    k1 = f(p, s, u)
    k2 = f(p, s + 0.5 * h * k1, u)
    k3 = f(p, s + 0.5 * h * k2, u)
    k4 = f(p, s + h * k3, u)
    return s + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def wrap_state(spec, s):
    s = np.array(s, dtype=float)
    for i in spec.angle_dims:
        s[..., i] = (s[..., i] + math.pi) % (2 * math.pi) - math.pi

    return s


def stage_cost(spec, state, action):
    e = wrap_state(spec, np.asarray(state, dtype=float) - np.asarray(spec.goal))
    u = np.atleast_1d(action)
    return float(np.sum(np.asarray(spec.q_env) * e * e) + np.sum(np.asarray(spec.r_env) * u * u))


def disturb(action, cfg, bounds, rng):
    """With probability p replace the action by a draw from {a_min, 0, a_max} (one draw per coordinate).

    Both draws are taken on every call, so runs that differ only in p see the same uniform sequence
    and the disturbed steps at a smaller p are a subset of those at a larger p.
    """
    action = np.atleast_1d(np.asarray(action, dtype=float))
    if cfg is None or cfg.p <= 0.0:
        return action

    hit = rng.random() < cfg.p
    pick = rng.integers(0, 3, size=action.shape)
    if hit:
        return np.array([bounds[0], 0.0, bounds[1]])[pick]

    return action


def step(spec, state, action, noise=None, disturbance=None, rng=None, t=0, noise_rng=None):
    """One RK4 step; returns (state', reward, done). Process noise draws from noise_rng when given, else rng."""
    u = np.clip(np.atleast_1d(np.asarray(action, dtype=float)), spec.a_min, spec.a_max)
    applied = disturb(u, disturbance, (spec.a_min, spec.a_max), rng) if rng is not None else u
    s_next = rk4(spec, state, applied)
    if noise is not None and noise.process_sigma > 0:
        s_next = s_next + noise.process_sigma * (rng if noise_rng is None else noise_rng).normal(size=s_next.shape)

    if not np.all(np.isfinite(s_next)):
        raise SimulationBlowupError(spec.name + " state became non-finite at t=" + str(t))

    return s_next, -stage_cost(spec, s_next, u), t + 1 >= spec.episode_length


def lift_matrices(spec):
    """Fixed pseudorandom (M, b) for the tanh observation lift, seeded from the task name."""
    rng = np.random.default_rng(zlib.crc32(spec.name.encode()))
    M = rng.normal(0.0, 1.0 / math.sqrt(spec.state_dim), size=(spec.d_obs, spec.state_dim))
    b = rng.uniform(-0.1, 0.1, size=spec.d_obs)
    return M, b


def observe(spec, state, noise=None, lift=False, rng=None, lift_mb=None):
    s = np.asarray(state, dtype=float)
    if lift:
        M, b = lift_mb if lift_mb is not None else lift_matrices(spec)
        obs = np.tanh(M @ s + b)
    else:
        obs = s.copy()

    if noise is not None and noise.obs_sigma > 0:
        obs = obs + noise.obs_sigma * rng.normal(size=obs.shape)

    return obs


def reset_state(spec, rng):
    return rng.uniform(spec.init_low, spec.init_high)


def msd_exact_discrete(spec, dt=None):
    """Exact ZOH (A, B) of the linear mass-spring-damper."""
    p = spec.params
    h = spec.dt if dt is None else dt
    A_c = np.array([[0.0, 1.0], [-p["k"] / p["m"], -p["c"] / p["m"]]])
    B_c = np.array([[0.0], [1.0 / p["m"]]])
    M = np.zeros((3, 3))
    M[:2, :2] = A_c
    M[:2, 2:] = B_c
    E = expm(M * h)
    return E[:2, :2], E[:2, 2:]


def linearize(spec, state, action=None, discrete=False, eps=1e-6):
    """Central-difference Jacobians of the ODE right-hand side (or of the RK4 step map when discrete)."""
    s = np.asarray(state, dtype=float)
    u = np.zeros(spec.action_dim) if action is None else np.atleast_1d(np.asarray(action, dtype=float))
    f = (lambda x, a: rk4(spec, x, a)) if discrete else (lambda x, a: dynamics(spec, x, a))
    A = np.zeros((s.size, s.size))
    B = np.zeros((s.size, u.size))
    for i in range(s.size):
        e = np.zeros(s.size)
        e[i] = eps
        A[:, i] = (f(s + e, u) - f(s - e, u)) / (2 * eps)

    for j in range(u.size):
        e = np.zeros(u.size)
        e[j] = eps
        B[:, j] = (f(s, u + e) - f(s, u - e)) / (2 * eps)

    return A, B


ENV_STREAMS = ("reset", "obs_noise", "process_noise", "disturbance")


@dataclass
class Env:
    """Stateful episode wrapper around step/observe.

    The generator seeds one independent sub-stream per source of randomness (ENV_STREAMS): two Envs built
    from equal generators start from the same initial states whatever their noise and disturbance settings.
    """
    spec: EnvSpec
    rng: np.random.Generator
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    disturbance: DisturbanceConfig = field(default_factory=DisturbanceConfig)
    lift: bool = True
    state: np.ndarray = None
    t: int = 0

    def __post_init__(self):
        self._lift_mb = lift_matrices(self.spec) if self.lift else None
        seeds = np.random.SeedSequence(int(self.rng.integers(2 ** 62))).spawn(len(ENV_STREAMS))
        self.streams = {n: np.random.default_rng(s) for n, s in zip(ENV_STREAMS, seeds)}

    @property
    def obs_dim(self):
        return self.spec.d_obs if self.lift else self.spec.state_dim

    def observe(self, state=None):
        s = self.state if state is None else state
        return observe(self.spec, s, self.noise, self.lift, self.streams["obs_noise"], self._lift_mb)

    def goal_observation(self):
        return observe(self.spec, np.asarray(self.spec.goal, dtype=float), None, self.lift, None, self._lift_mb)

    def reset(self, state=None):
        self.state = reset_state(self.spec, self.streams["reset"]) if state is None else np.asarray(state, dtype=float)
        self.t = 0
        return self.observe()

    def step(self, action):
        self.state, reward, done = step(self.spec, self.state, action, self.noise, self.disturbance,
                                        self.streams["disturbance"], self.t, self.streams["process_noise"])
        self.t += 1
        return self.observe(), reward, done

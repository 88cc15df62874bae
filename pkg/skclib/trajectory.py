from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from skclib.errors import EmptyInputError, SizeError


@dataclass
class Trajectory:
    """Time-indexed record of one episode.

    states/observations/latents hold T+1 rows (x_0..x_T), controls and rewards hold T rows.
    Latents are complex (mode coordinates); any of observations/latents may be None.
    """
    states: np.ndarray
    controls: np.ndarray
    rewards: np.ndarray = None
    observations: np.ndarray = None
    latents: np.ndarray = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        self.controls = np.asarray(self.controls, dtype=float).reshape(len(self.controls), -1)
        if self.rewards is None:
            self.rewards = np.zeros(len(self.controls))

        self.rewards = np.asarray(self.rewards, dtype=float)

    def __len__(self):
        return len(self.controls)

    # aligned (z_k, u_k) pairs for k < T
    def aligned(self, use="latents"):
        z = self.latents if use == "latents" else self.states
        if z is None:
            raise SizeError("trajectory has no " + use)

        if len(z) < len(self.controls):
            raise SizeError("trajectory has fewer " + use + " than controls")

        return z[:len(self.controls)], self.controls

    def to_csv(self, path):
        T = len(self)
        cols = {"t": np.arange(T)}
        for i in range(self.states.shape[1]):
            cols["state_" + str(i)] = self.states[:T, i]

        for i in range(self.controls.shape[1]):
            cols["action_" + str(i)] = self.controls[:, i]

        cols["reward"] = self.rewards[:T]
        if self.observations is not None:
            for i in range(self.observations.shape[1]):
                cols["obs_" + str(i)] = self.observations[:T, i]

        pd.DataFrame(cols).to_csv(path, index=False)


def _rows(a):
    a = np.asarray(a)
    if a.size == 0 and a.ndim < 2:
        return a.reshape(0, 0)

    return np.atleast_2d(a)


@dataclass
class TransitionBatch:
    """Consecutive (z_t, u_t, z_{t+1}) triples; z may be real or complex."""
    z: np.ndarray
    u: np.ndarray
    z_next: np.ndarray

    def __post_init__(self):
        self.z = _rows(self.z)
        self.z_next = _rows(self.z_next)
        self.u = np.asarray(self.u, dtype=float).reshape(len(self.z), -1) if len(self.z) else np.zeros((0, 1))
        if self.z.shape != self.z_next.shape:
            raise SizeError("z and z_next differ in shape: " + str(self.z.shape) + " vs " + str(self.z_next.shape))

        if len(self.u) != len(self.z):
            raise SizeError("batch has " + str(len(self.z)) + " states but " + str(len(self.u)) + " controls")

    def __len__(self):
        return len(self.z)

    def require_nonempty(self):
        if len(self) == 0:
            raise EmptyInputError("transition batch is empty")

    def head(self, n):
        return TransitionBatch(self.z[:n], self.u[:n], self.z_next[:n])

    @classmethod
    def from_trajectories(cls, trajs, use="latents"):
        zs, us, zn = [], [], []
        for tr in trajs:
            z = tr.latents if use == "latents" else tr.states
            T = len(tr)
            zs.append(z[:T])
            us.append(tr.controls)
            zn.append(z[1:T + 1])

        if not zs:
            raise EmptyInputError("no trajectories given")

        return cls(np.concatenate(zs), np.concatenate(us), np.concatenate(zn))

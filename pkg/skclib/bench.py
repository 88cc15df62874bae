"""Multiply-accumulate accounting and wall-time measurement for latent rollout predictors."""

from dataclasses import dataclass
import logging
import platform
import socket
import time

import numpy as np
import pandas as pd

from skclib._version import __skc_version__
from skclib.errors import BenchmarkMismatchError, ConfigError
from skclib.spectral import DiscreteSpectral, predict_parallel, predict_sequential

KINDS = ("spectral", "dense_koopman", "mlp", "recurrent")
GATES = 3
MIN_REPS = 5
AGREE_TOL = 1e-9

# H-step rollout cost in real multiply-accumulates; a complex multiply counts as 4.
# The mlp and recurrent rows are stand-in architectures; the recurrent cell has hidden width h, not d.
STAND_IN = "stand-in: "
FORMULAS = {
    "spectral": "H*(4*(d/2) + 4*(d/2)*u)",
    "dense_koopman": "H*(d*d + d*u)",
    "mlp": STAND_IN + "H*(d*h + h*h + h*d + (d+u)*h)",
    "recurrent": STAND_IN + "H*(3*(d+u+h)*h)",
}


@dataclass
class CostModel:
    kind: str
    d: int
    h: int
    H: int
    u: int

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError("bench.kind", "unknown predictor kind '" + str(self.kind) + "'")

        for name in ("d", "h", "H", "u"):
            if int(getattr(self, name)) < 1:
                raise ConfigError("bench." + name, "must be a positive integer")


def count_macs(c):
    """Real MACs for an H-step rollout of the predictor described by c (see FORMULAS)."""
    d, h, H, u = c.d, c.h, c.H, c.u
    if c.kind == "spectral":
        modes = d // 2
        return H * (4 * modes + 4 * modes * u)

    if c.kind == "dense_koopman":
        return H * (d * d + d * u)

    if c.kind == "mlp":
        return H * (d * h + h * h + h * d + (d + u) * h)

    return H * (GATES * (d + u + h) * h)


def ordering_rows(d, u, H, h=1024):
    """MAC counts of all four predictors at one shape, with the ascending-cost ordering check."""
    rows = []
    for kind in KINDS:
        c = CostModel(kind, d, h, H, u)
        rows.append({"kind": kind, "d": d, "h": h if kind in ("mlp", "recurrent") else 0, "u": u, "H": H,
                     "macs": count_macs(c), "formula": FORMULAS[kind]})

    macs = [r["macs"] for r in rows]
    flag = "PASS" if all(a < b for a, b in zip(macs[:-1], macs[1:])) else "FAIL"
    for r in rows:
        r["ordering"] = flag

    return rows


def crossover_rows(ds, us, Hs):
    rows = []
    for d in ds:
        for u in us:
            for H in Hs:
                s = count_macs(CostModel("spectral", d, 1, H, u))
                dk = count_macs(CostModel("dense_koopman", d, 1, H, u))
                rows.append({"d": d, "u": u, "H": H, "spectral_macs": s, "dense_macs": dk,
                             "spectral_lt_dense": "PASS" if s < dk else "FAIL"})

    return rows


def host_metadata():
    return {"hostname": socket.gethostname(), "platform": platform.platform(), "python": platform.python_version(),
            "numpy": np.__version__, "skc_version": __skc_version__,
            "threads": "sequential: single dependent chain; parallel_fft: vectorized across modes"}


def random_stable_system(m, u, rng):
    radius = rng.uniform(0.5, 0.999, size=m)
    angle = rng.uniform(-np.pi, np.pi, size=m)
    lam_bar = radius * np.exp(1j * angle)
    control_bar = rng.normal(size=(m, u)) + 1j * rng.normal(size=(m, u))
    return DiscreteSpectral(lam_bar, 0.1 * control_bar)


@dataclass
class TimingResult:
    impl: str
    m: int
    H: int
    reps: int
    median_ns: float
    iqr_ns: float
    max_abs_diff: float


IMPLS = {"sequential": lambda d, z0, c: predict_sequential(d, z0, c),
         "parallel_fft": lambda d, z0, c: predict_parallel(d, z0, c, method="fft")}


def check_agreement(d, z0, controls):
    """Both rollouts on the same inputs; raises BenchmarkMismatchError beyond AGREE_TOL (relative)."""
    seq = IMPLS["sequential"](d, z0, controls)
    par = IMPLS["parallel_fft"](d, z0, controls)
    scale = max(1.0, float(np.max(np.abs(seq))))
    diff = float(np.max(np.abs(seq - par)))
    if not diff <= AGREE_TOL * scale:
        worst = np.unravel_index(int(np.argmax(np.abs(seq - par))), seq.shape)
        report = {"max_abs_diff": diff, "scale": scale, "index": [int(i) for i in worst],
                  "sequential": complex(seq[worst]), "parallel_fft": complex(par[worst])}
        raise BenchmarkMismatchError("sequential and parallel_fft rollouts disagree (max |diff| "
                                     + "{:.3e}".format(diff) + ")", diff_report=report)

    return diff, seq


def time_rollout(impl, m, H, reps, rng, u=1):
    """Median and interquartile range of wall time for one H-step, m-mode rollout.

    The two implementations are compared first; nothing is timed if they disagree.
    """
    if impl not in IMPLS:
        raise ConfigError("bench.impl", "unknown implementation '" + str(impl) + "'")

    if reps < MIN_REPS:
        raise ConfigError("bench.reps", "must be at least " + str(MIN_REPS) + ", got " + str(reps))

    d = random_stable_system(m, u, rng)
    z0 = rng.normal(size=m) + 1j * rng.normal(size=m)
    controls = rng.normal(size=(H, u))
    diff, _ = check_agreement(d, z0, controls)

    fn = IMPLS[impl]
    samples = []
    for _ in range(reps):
        t0 = time.perf_counter_ns()
        fn(d, z0, controls)
        samples.append(time.perf_counter_ns() - t0)

    q1, med, q3 = np.percentile(samples, [25, 50, 75])
    return TimingResult(impl, m, H, reps, float(med), float(q3 - q1), diff)


def timing_rows(ms, Hs, reps, rng):
    rows = []
    for m in ms:
        for H in Hs:
            res = {impl: time_rollout(impl, m, H, reps, rng) for impl in IMPLS}
            faster = res["parallel_fft"].median_ns < res["sequential"].median_ns
            if not faster and H >= 1024:
                logging.warning("parallel_fft was not faster than sequential at m=" + str(m) + ", H=" + str(H))

            for impl, r in res.items():
                rows.append({"impl": impl, "m": m, "H": H, "reps": reps, "median_ns": r.median_ns,
                             "iqr_ns": r.iqr_ns, "max_abs_diff": r.max_abs_diff,
                             "fft_faster": "PASS" if faster else "FAIL"})

    return rows


def write_rows(rows, path, meta=None):
    df = pd.DataFrame(rows)
    for k, v in (meta or {}).items():
        df[k] = v

    df.to_csv(path, index=False)
    return df

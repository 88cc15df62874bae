"""Subcommands of the SpectralKoopman-control driver: fit, train, control, robustness, bench, report."""

import argparse
import glob
import json
import logging
import os
import sys

import numpy as np
import pandas as pd

from skclib import agent as agent_mod
from skclib import bench
from skclib._version import __skc_version__
from skclib.envs import DisturbanceConfig, Env, NoiseConfig, linearize, make_spec, msd_exact_discrete, rk4, wrap_state
from skclib.errors import ConfigError, SkcError
from skclib.lqr import CostWeights, dare_iterate, finite_horizon
from skclib.runio import RunContext, build_config, make_streams, require, write_csv
from skclib.spectral import save_koopman
from skclib.sysid import INIT_PRESETS, fit_dense_lsq, fit_spectral_sgd, linear_modal_dataset, simulate_linear
from skclib.trajectory import Trajectory, TransitionBatch

COMMANDS = ("fit", "train", "control", "robustness", "bench", "report")

# flag dest -> dotted config path
FLAG_PATHS = {
    "seed": "seed", "output_directory": "output_directory", "env": "env.name", "obs_sigma": "env.obs_sigma",
    "disturbance_p": "env.disturbance_p", "n": "fit.n", "method": "fit.method", "sigma": "fit.sigma",
    "steps": "train.steps", "checkpoint_every": "train.checkpoint_every", "model": "control.model",
    "horizon": "control.horizon", "episodes": "control.episodes", "checkpoint": "robustness.checkpoint",
    "policy": "robustness.policy", "reps": "bench.reps", "inputs": "report.inputs",
}


def build_parser():
    parser = argparse.ArgumentParser(
        description="Spectral Koopman control: identification, LQR-conditioned SAC training, robustness sweeps "
                    "and compute benchmarks.")
    parser.add_argument("--version", action='version', version=__skc_version__)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    def common(p, env=True):
        p.add_argument("--config", metavar='FILE', help="JSON run configuration (flags override file values)")
        p.add_argument("--seed", metavar='INT', type=int, help="Master seed for all random sub-streams")
        p.add_argument("--output_directory", metavar='PATH', help="Parent directory for run directories")
        if env:
            p.add_argument("--env", metavar='STR', help="Task name (msd, pendulum, pendulum_swingup, cartpole_swingup)")

    p = sub.add_parser("fit", help="Identify a linear or spectral model from simulated transitions")
    common(p)
    p.add_argument("--n", metavar='INT', type=int, help="Number of transitions for the dense fit")
    p.add_argument("--method", metavar='STR', choices=["dense_lsq", "spectral"], help="dense_lsq or spectral")
    p.add_argument("--sigma", metavar='FLOAT', type=float, help="Process noise standard deviation")

    p = sub.add_parser("train", help="Train the Koopman-LQR soft actor-critic agent")
    common(p)
    p.add_argument("--steps", metavar='INT', type=int, help="Environment steps")
    p.add_argument("--checkpoint_every", metavar='INT', type=int, help="Checkpoint period in steps")
    p.add_argument("--obs_sigma", metavar='FLOAT', type=float, help="Observation noise standard deviation")
    p.add_argument("--disturbance_p", metavar='FLOAT', type=float, help="External disturbance probability")

    p = sub.add_parser("control", help="Pure LQR on a known or identified model of the task")
    common(p)
    p.add_argument("--model", metavar='STR', choices=["known", "identified"], help="known or identified")
    p.add_argument("--horizon", metavar='INT', type=int, help="Finite horizon T (0 solves the DARE)")
    p.add_argument("--episodes", metavar='INT', type=int, help="Evaluation episodes")

    p = sub.add_parser("robustness", help="Reward under disturbance probability and observation noise grids")
    common(p)
    p.add_argument("--checkpoint", metavar='FILE', help="Agent checkpoint written by train")
    p.add_argument("--policy", metavar='STR', choices=["agent", "lqr"], help="agent (checkpoint) or lqr")

    p = sub.add_parser("bench", help="MAC counts and rollout timings of latent predictors")
    common(p, env=False)
    p.add_argument("--reps", metavar='INT', type=int, help="Timing repetitions (at least 5)")

    p = sub.add_parser("report", help="Aggregate CSV outputs of run directories into summary tables")
    common(p, env=False)
    p.add_argument("--inputs", metavar='PATH', nargs='+', help="Run directories or CSV files")

    return parser


def config_from_args(args):
    flags = {}
    for dest, dotted in FLAG_PATHS.items():
        if hasattr(args, dest):
            flags[dotted] = getattr(args, dest)

    return build_config(args.config, flags)


def _env_from(tree, rng, lift=None, obs_sigma=None, p=None):
    e = tree["env"]
    spec = make_spec(require(tree, "env.name", str), e["overrides"])
    noise = NoiseConfig(e["obs_sigma"] if obs_sigma is None else obs_sigma, e["process_sigma"])
    dist = DisturbanceConfig(e["disturbance_p"] if p is None else p)
    return Env(spec, rng, noise, dist, e["lift"] if lift is None else lift)


def _ground_truth(spec, discrete=True, point=None):
    point = np.asarray(spec.goal, dtype=float) if point is None else point
    if spec.model == "msd":
        return msd_exact_discrete(spec) if discrete else linearize(spec, point)

    return linearize(spec, point, discrete=discrete)


def rest_state(spec):
    """Stable equilibrium used for identification data (pendulum models hang down)."""
    s = np.array(spec.goal, dtype=float)
    s[list(spec.angle_dims)] = np.pi
    return s


def cmd_fit(ctx, tree, streams):
    """Dense least squares on simulated linear(ized) data, or the spectral fit on modal trajectories."""
    f = tree["fit"]
    spec = make_spec(require(tree, "env.name", str), tree["env"]["overrides"])
    if f["method"] == "dense_lsq":
        A, B = _ground_truth(spec, point=rest_state(spec))
        n = require(tree, "fit.n", int, positive=True)
        batch = simulate_linear(A, B, n, streams["data"], f["sigma"], f["u_scale"])
        A_hat, B_hat, report = fit_dense_lsq(batch, A, B, f["sample_sizes"] + [n])
        write_csv(report.frame(), ctx.path("fit_error_curve.csv"))
        with open(ctx.path("fit_model.json"), 'w') as fp:
            json.dump({"kind": "dense", "A": A_hat.tolist(), "B": B_hat.tolist(),
                       "condition_number": report.condition_number}, fp, indent=2)

    elif f["method"] == "spectral":
        A_c, B_c = _ground_truth(spec, discrete=False, point=rest_state(spec))
        truth, trajs = linear_modal_dataset(A_c, B_c, spec.dt, f["n_traj"], f["traj_len"], streams["data"],
                                            f["u_scale"])
        if f["init_strategy"] not in INIT_PRESETS:
            raise ConfigError("fit.init_strategy", "unknown strategy '" + str(f["init_strategy"]) + "'")

        K, report = fit_spectral_sgd(trajs, INIT_PRESETS[f["init_strategy"]], epochs=f["epochs"],
                                     rng=streams["init"], truth=truth, dt=spec.dt)
        write_csv(report.frame(), ctx.path("fit_error_curve.csv"))
        save_koopman(K, ctx.path("fit_model.json"))
    else:
        raise ConfigError("fit.method", "must be dense_lsq or spectral")

    logging.info("Final parameter error: errA " + "{:.3e}".format(report.param_error_curve[-1][1]))
    ctx.stage("Identification")


def cmd_train(ctx, tree, streams):
    env = _env_from(tree, streams["env"])
    steps = require(tree, "train.steps", int)
    if steps < 0:
        raise ConfigError("train.steps", "must be non-negative")

    cfg = agent_mod.AgentConfig.from_dict(tree["agent"])
    spec = env.spec
    state = agent_mod.init_agent(cfg, env.obs_dim, spec.action_dim, (spec.a_min, spec.a_max),
                                 env.goal_observation(), spec.dt, streams["init"])
    record = agent_mod.RunRecord(ctx.path("run_record.jsonl"))
    every = require(tree, "train.checkpoint_every", int, positive=True)

    def checkpoint(s):
        agent_mod.save_agent(s, ctx.path("checkpoint_step" + str(s.step) + ".json"))
        logging.info("Checkpoint written at step " + str(s.step))

    logging.info("Training on " + spec.name + " for " + str(steps) + " steps")
    agent_mod.train(state, env, steps, streams["agent"], streams["augment"], record, checkpoint, every)
    agent_mod.save_agent(state, ctx.path("agent_final.json"))
    ctx.stage("Training")

    n_eval = tree["train"]["eval_episodes"]
    if n_eval > 0:
        eval_env = _env_from(tree, streams["eval"])
        summary = agent_mod.summarize_returns(agent_mod.evaluate_policy(state, eval_env, n_eval))
        write_csv([summary], ctx.path("train_eval.csv"))
        ctx.stage("Evaluation")


def _identify(spec, n, rng):
    """Dense fit on one-step transitions drawn around the goal."""
    goal = np.asarray(spec.goal, dtype=float)
    S = rng.uniform(spec.init_low, spec.init_high, size=(n, spec.state_dim))
    S = goal + wrap_state(spec, S - goal)
    U = rng.uniform(0.25 * spec.a_min, 0.25 * spec.a_max, size=(n, spec.action_dim))
    S_next = np.array([rk4(spec, s, a) for s, a in zip(S, U)])
    batch = TransitionBatch(wrap_state(spec, S - goal), U, wrap_state(spec, S_next - goal))
    A, B, _ = fit_dense_lsq(batch)
    return A, B


def lqr_controller(spec, model="known", horizon=0, rng=None, n_identify=5000):
    """State-feedback gain for the task's own stage cost on a known or identified linear model."""
    if model == "known":
        A, B = _ground_truth(spec)
    elif model == "identified":
        A, B = _identify(spec, n_identify, rng)
    else:
        raise ConfigError("control.model", "must be known or identified")

    w = CostWeights(spec.q_env, spec.r_env)
    if horizon:
        return finite_horizon(A, B, w, None, horizon).gains[0]

    return dare_iterate(A, B, w).G


def run_lqr_episode(env, G):
    """Returns (Trajectory, return) of u = -G e with e = wrap(obs - goal); env must observe raw states."""
    spec = env.spec
    goal = np.asarray(spec.goal, dtype=float)
    obs = env.reset()
    states, actions, rewards = [env.state.copy()], [], []
    done = False
    while not done:
        a = np.clip(-G @ wrap_state(spec, obs - goal), spec.a_min, spec.a_max)
        obs, r, done = env.step(a)
        states.append(env.state.copy())
        actions.append(a)
        rewards.append(r)

    return Trajectory(np.array(states), np.array(actions), np.array(rewards)), float(np.sum(rewards))


def settle_step(spec, traj, tol):
    e = np.abs(wrap_state(spec, traj.states - np.asarray(spec.goal)))
    err = e[:, list(spec.angle_dims)] if spec.angle_dims else e
    inside = np.max(err, axis=1) < tol
    return int(np.argmax(inside)) if np.any(inside) else -1


def cmd_control(ctx, tree, streams):
    c = tree["control"]
    env = _env_from(tree, streams["eval"], lift=False)
    G = lqr_controller(env.spec, c["model"], c["horizon"], streams["data"], c["n_identify"])
    ctx.stage("Gain computation")
    rows = []
    for ep in range(c["episodes"]):
        traj, ret = run_lqr_episode(env, G)
        k = settle_step(env.spec, traj, c["tolerance"])
        rows.append({"episode": ep, "return": ret, "settle_step": k, "settled": k >= 0})
        if ep == 0:
            traj.to_csv(ctx.path("control_trajectory_ep0.csv"))

    write_csv(rows, ctx.path("control_summary.csv"))
    with open(ctx.path("control_gain.json"), 'w') as fp:
        json.dump({"model": c["model"], "G": np.atleast_2d(G).tolist()}, fp, indent=2)

    logging.info("Settled in " + str(sum(r["settled"] for r in rows)) + "/" + str(len(rows)) + " episodes")
    ctx.stage("Episodes")


def robustness_rows(tree, policy, seed, state=None, G=None):
    """One row per (p, sigma) cell; every cell reuses the same per-seed evaluation streams."""
    r = tree["robustness"]
    rows = []
    for p in r["p_grid"]:
        for sigma in r["sigma_grid"]:
            per_seed, pooled = [], []
            for i in range(r["seeds"]):
                rng = make_streams(seed + i, ("eval",))["eval"]
                if policy == "agent":
                    env = _env_from(tree, rng, obs_sigma=sigma, p=p)
                    rets = agent_mod.evaluate_policy(state, env, r["episodes"])
                else:
                    env = _env_from(tree, rng, lift=False, obs_sigma=sigma, p=p)
                    rets = [run_lqr_episode(env, G)[1] for _ in range(r["episodes"])]

                per_seed.append(float(np.mean(rets)))
                pooled.extend(rets)

            s = agent_mod.summarize_returns(pooled)
            rows.append({"p": p, "obs_sigma": sigma, "median_seed_mean": float(np.median(per_seed)),
                         "mean": s["mean"], "iqm": s["iqm"], "q1": s["q1"], "q3": s["q3"], "n": s["n"]})

    return rows


def cmd_robustness(ctx, tree, streams):
    r = tree["robustness"]
    if r["episodes"] < 1 or r["seeds"] < 1:
        raise ConfigError("robustness.episodes", "episodes and seeds must be positive")

    policy = r["policy"]
    state, G = None, None
    if policy == "agent":
        ckpt = require(tree, "robustness.checkpoint", str)
        if not os.path.exists(ckpt):
            raise FileNotFoundError("checkpoint not found: " + ckpt)

        state = agent_mod.load_agent(ckpt)
    else:
        env = _env_from(tree, streams["eval"], lift=False)
        G = lqr_controller(env.spec)

    rows = robustness_rows(tree, policy, tree["seed"], state, G)
    write_csv(rows, ctx.path("robustness_sweep.csv"))
    ctx.stage("Robustness sweep")


def cmd_bench(ctx, tree, streams):
    b = tree["bench"]
    if require(tree, "bench.reps", int) < bench.MIN_REPS:
        raise ConfigError("bench.reps", "must be at least " + str(bench.MIN_REPS) + ", got " + str(b["reps"]))

    write_csv(bench.crossover_rows(b["d_grid"], b["u_grid"], b["H_grid"]), ctx.path("bench_crossover.csv"))
    write_csv(bench.ordering_rows(b["order_d"], b["order_u"], b["order_H"], b["order_h"]), ctx.path("bench_macs.csv"))
    ctx.stage("MAC counting")
    timing = bench.timing_rows(b["m_grid"], b["timing_H_grid"], b["reps"], streams["bench"])
    bench.write_rows(timing, ctx.path("bench_timing.csv"), bench.host_metadata())
    ctx.stage("Rollout timing")


def collect_csvs(inputs):
    paths = []
    for p in inputs:
        if os.path.isdir(p):
            paths.extend(sorted(glob.glob(os.path.join(p, "*.csv"))))
        elif os.path.exists(p):
            paths.append(p)
        else:
            raise FileNotFoundError("report input not found: " + p)

    return paths


def summarize_csv(path):
    df = pd.read_csv(path)
    num = df.select_dtypes(include="number")
    rows = []
    for col in num.columns:
        s = num[col]
        rows.append({"source": os.path.basename(os.path.dirname(os.path.abspath(path))) + "/" + os.path.basename(path),
                     "column": col, "count": int(s.count()), "mean": s.mean(), "std": s.std(), "min": s.min(),
                     "median": s.median(), "max": s.max(), "last": s.iloc[-1] if len(s) else np.nan})

    return rows


def cmd_report(ctx, tree, streams):
    inputs = require(tree, "report.inputs", list)
    if not inputs:
        raise ConfigError("report.inputs", "needs at least one run directory or CSV file")

    rows = []
    for path in collect_csvs(inputs):
        rows.extend(summarize_csv(path))

    write_csv(pd.DataFrame(rows, columns=["source", "column", "count", "mean", "std", "min", "median", "max", "last"]),
              ctx.path("report_summary.csv"))
    ctx.stage("Report")


DISPATCH = {"fit": cmd_fit, "train": cmd_train, "control": cmd_control, "robustness": cmd_robustness,
            "bench": cmd_bench, "report": cmd_report}

PREFLIGHT = {"fit": ["env.name"], "train": ["env.name"], "control": ["env.name"], "robustness": ["env.name"]}


def main(argv=None):
    """Runs one subcommand; returns 0 on success, 2 on usage/config errors, 3 on runtime errors."""
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code in (0, None) else 2

    try:
        tree = config_from_args(args)
        for dotted in PREFLIGHT.get(args.command, []):
            require(tree, dotted)

        if args.command in ("fit", "train", "control", "robustness"):
            make_spec(tree["env"]["name"], tree["env"]["overrides"])

    except ConfigError as e:
        sys.stderr.write("Configuration error: " + str(e) + "\n")
        return 2

    streams = make_streams(tree["seed"])
    try:
        with RunContext(args.command, tree, ["SpectralKoopman-control.py"] + argv) as ctx:
            DISPATCH[args.command](ctx, tree, streams)
            logging.info("All stages completed; outputs in " + ctx.outdir)

    except ConfigError as e:
        logging.error("Configuration error: " + str(e))
        return 2

    except (SkcError, FileNotFoundError) as e:
        logging.error(type(e).__name__ + ": " + str(e))
        return 3

    return 0

"""Command-line experiment driver.

Usage::

    asl <command> --config PATH [--out DIR] [--seed N] [--workers N]
                  [--delta D] [--reps R]

Commands: simulate, steady-state, exponents, transient, nonstationary,
sweep.  Every CSV starts with ``# asl <version> config=<hash> seed=<seed>``
and is accompanied by a ``.json`` sidecar with the canonical config and
column list.  Exit codes: 0 success, 2 invalid config or input, 3
numerical failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .analysis import (adaptation_time, gaussian_error_probability, instantaneous_bound,
                       refined_moments, steady_state_descriptors, transient_constants,
                       worst_case_adaptation_time)
from .config import build_matrix, config_hash, expand_grid, materialize, normalize
from .engine import Strategy, StrategyKind, run_final_batch, run_trajectory
from .errors import ConfigError, NumericalError, ParameterError, ValidationError
from .graph import analyze_network
from .montecarlo import (MCPlan, StationaryExperiment, exponent_slope, rep_generator, run_plan,
                         write_results_csv)
from .nonstationary import (Environment, PerturbationModel, RegimeProcess, RegimeState,
                            recovery_time_statistics, run_nonstationary, simulate_sojourns,
                            worst_case_cycle_stats)

COMMANDS = ("simulate", "steady-state", "exponents", "transient", "nonstationary", "sweep")
GAUSS_SAMPLES = 200_000
FUNCTIONING = {"nominal": 0, "perturbed": 1, "bad": 2}


class Run:
    """Resolved config plus the output helpers shared by all commands."""

    def __init__(self, cfg, base_dir, out, workers, command):
        self.cfg = cfg
        self.base_dir = base_dir
        self.out = Path(out)
        self.workers = workers
        self.command = command
        self.hash = config_hash(cfg)
        self.seed = cfg["seed"]
        self.written = []

    @property
    def theta0(self):
        return self.cfg["theta0"] - 1

    def strategy(self):
        st = self.cfg["strategy"]
        kind = StrategyKind(st["kind"])
        if kind is StrategyKind.TRADITIONAL:
            return Strategy.traditional()
        return Strategy(kind, st["delta"])

    def adaptive_kind(self):
        """Strategy kind for step-size sweeps; traditional learning has no step size."""
        kind = StrategyKind(self.cfg["strategy"]["kind"])
        if kind is StrategyKind.TRADITIONAL:
            raise ConfigError(f"'{self.command}' needs an adaptive strategy (asl or flattened)")
        return kind

    def write(self, name, columns, rows, meta=None):
        """Write ``name`` with the provenance header and its JSON sidecar."""
        self.out.mkdir(parents=True, exist_ok=True)
        buf = io.StringIO()
        buf.write(f"# asl {__version__} config={self.hash} seed={self.seed}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        w.writerows(rows)
        path = self.out / name
        path.write_text(buf.getvalue())
        side = {"tool": "asl", "version": __version__, "command": self.command,
                "config_hash": self.hash, "seed": self.seed, "columns": list(columns),
                "config": self.cfg, "meta": meta or {}}
        path.with_suffix(".json").write_text(json.dumps(side, sort_keys=True, indent=2,
                                                        default=_jsonable) + "\n")
        self.written.append(path)
        return path


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"cannot serialize {type(x).__name__}")


def _f(x):
    """Shortest round-trip float text; keeps CSV bodies byte-stable."""
    if x is None:
        return ""
    return repr(float(x))


def _schedule(cfg, horizon):
    sched = np.full(horizon, cfg["theta0"] - 1, dtype=int)
    for s, h in cfg["change_points"]:
        sched[s:] = h - 1
    return sched


# commands ---------------------------------------------------------------------

def cmd_simulate(run):
    """One seeded trajectory with optional scripted change points.

    A change point ``[s, h]`` makes hypothesis ``h`` true from step
    ``s + 1`` on.
    """
    cfg = run.cfg
    _, a, model = materialize(cfg, run.base_dir)
    sched = _schedule(cfg, cfg["horizon"])
    if sched.max() >= model.n_hypotheses:
        raise ConfigError("a change point names a hypothesis the model does not have")
    rec = run_trajectory(model, a, run.strategy(), cfg["horizon"], sched, seed=run.seed,
                         record_every=cfg["record_every"])
    buf = io.StringIO()
    rec.write_csv(buf)
    lines = buf.getvalue().splitlines()
    run.write("trajectory.csv", lines[0].split(","), (l.split(",") for l in lines[1:]),
              {"strategy": run.strategy().label()})
    stats = recovery_time_statistics(rec, cfg["environment"]["persistence"], model.n_hypotheses)
    run.write("recovery.csv", ("change_step", "old", "new", "recovery_steps", "censored"),
              [(c.step, c.old + 1, c.new + 1, "" if c.duration is None else c.duration,
                int(c.censored)) for c in stats.changes])
    return rec


def cmd_steady_state(run):
    cfg = run.cfg
    _, a, model = materialize(cfg, run.base_dir)
    net = analyze_network(a)
    kind = run.adaptive_kind()
    delta = cfg["strategy"]["delta"]
    d = steady_state_descriptors(model, a, run.theta0, delta=delta, analysis=net)
    wrong = d.wrong
    rows = []
    for j, th in enumerate(wrong):
        rows.append(("m_ave", "", th + 1, "", _f(d.m_ave[j])))
        for jj, thp in enumerate(wrong):
            rows.append(("C_ave", "", th + 1, thp + 1, _f(d.C_ave[j, jj])))
    for k in range(model.n_agents):
        for j, th in enumerate(wrong):
            rows.append(("m_k_delta", k + 1, th + 1, "", _f(d.m_k_delta[k, j])))
            for jj, thp in enumerate(wrong):
                rows.append(("C_k_delta", k + 1, th + 1, thp + 1, _f(d.C_k_delta[k, j, jj])))
    run.write("descriptors.csv", ("quantity", "agent", "theta", "theta_prime", "value"), rows,
              {"delta": delta})

    # concentration sweep: one trajectory per step size
    ss = cfg["steady_state"]
    rows = []
    for di, dl in enumerate(expand_grid(ss["sweep"])):
        logb = run_final_batch(model, a, Strategy(kind, dl), ss["sweep_horizon"], run.theta0,
                               [rep_generator(run.seed, di, 0)])[0]
        lam = logb[:, run.theta0:run.theta0 + 1] - logb
        for k in range(model.n_agents):
            for j, th in enumerate(wrong):
                half = 5 * math.sqrt(dl * d.C_ave[j, j] / 2)
                rows.append((_f(dl), k + 1, th + 1, _f(lam[k, th]), _f(d.m_ave[j]), _f(half)))
    run.write("concentration.csv",
              ("delta", "agent", "theta", "lambda", "m_ave", "band_halfwidth"), rows,
              {"horizon": ss["sweep_horizon"]})

    # CLT data: empirical moments against both approximations
    plan = MCPlan(expand_grid(ss["clt_deltas"]), ss["clt_reps"], cfg["mc"]["horizon_factor"],
                  run.seed)
    exp = StationaryExperiment(model, a, run.theta0, kind)
    rows = []
    for est in run_plan(exp, plan, run.workers):
        mk, Ck = refined_moments(model, a, est.delta, run.theta0)
        for k in range(model.n_agents):
            for j, th in enumerate(wrong):
                for jj, thp in enumerate(wrong):
                    rows.append((_f(est.delta), k + 1, th + 1, thp + 1,
                                 _f(est.mean_lambda[k, j]), _f(est.cov_lambda[k, j, jj]),
                                 _f(d.m_ave[j]), _f(est.delta * d.C_ave[j, jj] / 2),
                                 _f(mk[k, j]), _f(Ck[k, j, jj])))
    run.write("clt.csv", ("delta", "agent", "theta", "theta_prime", "emp_mean", "emp_cov",
                          "ave_mean", "ave_cov", "refined_mean", "refined_cov"), rows,
              {"reps": ss["clt_reps"], "horizon_factor": cfg["mc"]["horizon_factor"]})
    return d


def cmd_exponents(run):
    cfg = run.cfg
    _, a, model = materialize(cfg, run.base_dir)
    net = analyze_network(a)
    d = steady_state_descriptors(model, a, run.theta0, analysis=net)
    run.write("exponents.csv", ("theta", "t_star", "Phi_theta", "Phi"),
              [(th + 1, _f(d.t_star[j]), _f(d.Phi_theta[j]), _f(d.Phi))
               for j, th in enumerate(d.wrong)],
              {"beta2": net.beta2_magnitude, "pi": net.pi})
    deltas = expand_grid(cfg["mc"]["deltas"])
    rows = []
    for di, dl in enumerate(deltas):
        mk, Ck = refined_moments(model, a, dl, run.theta0)
        for k in range(model.n_agents):
            p, se = gaussian_error_probability(mk[k], Ck[k], GAUSS_SAMPLES, seed=[run.seed, di, k])
            rows.append((_f(dl), k + 1, _f(p), _f(se)))
    run.write("gaussian_curve.csv", ("delta", "agent", "p_gauss", "stderr"), rows,
              {"samples": GAUSS_SAMPLES})
    if cfg["mc"]["run"]:
        kind = run.adaptive_kind()
        plan = MCPlan(deltas, cfg["mc"]["reps"], cfg["mc"]["horizon_factor"], run.seed,
                      cfg["mc"]["thin"])
        ests = run_plan(StationaryExperiment(model, a, run.theta0, kind), plan, run.workers)
        buf = io.StringIO()
        write_results_csv(buf, ests)
        lines = buf.getvalue().splitlines()
        run.write("mc_error.csv", lines[0].split(","), (l.split(",") for l in lines[1:]))
        rows = []
        for k in range(model.n_agents):
            p = np.array([e.p_hat[k] for e in ests])
            try:
                fit = exponent_slope(deltas, p, plan.reps)
                rows.append((k + 1, _f(fit.slope), _f(fit.stderr), int(fit.used.sum()), _f(d.Phi)))
            except ValidationError:
                rows.append((k + 1, "", "", 0, _f(d.Phi)))
        run.write("slope.csv", ("agent", "slope", "slope_stderr", "points", "Phi"), rows)
    return d


def cmd_transient(run):
    cfg = run.cfg
    tr = cfg["transient"]
    _, a, model = materialize(cfg, run.base_dir)
    net = analyze_network(a)
    d = steady_state_descriptors(model, a, run.theta0, analysis=net)
    deltas = expand_grid(tr["deltas"])
    rows = []
    if tr["initial"] == "uniform":
        lam0 = np.zeros((model.n_agents, len(d.wrong)))
        tc = transient_constants(model, net.pi, net.kappa, lam0, run.theta0, net.beta, d.t_star)
        for dl in deltas:
            for eps in tr["epsilons"]:
                try:
                    T, case = adaptation_time(tc, d.Phi, net.beta, dl, eps)
                except ParameterError:
                    T, case = None, "inadmissible"
                rows.append((_f(dl), _f(eps), case, _f(tc.K1), _f(tc.K2), _f(T),
                             _f(None if T is None else T * dl)))
        curve = []
        for dl in deltas:
            steps = np.arange(0, math.ceil(tr["bound_factor"] / dl) + 1)
            b = instantaneous_bound(tc, d.Phi_theta, dl, steps, net.beta)
            curve += [(_f(dl), int(i), _f(v)) for i, v in zip(steps, b)]
        run.write("bound.csv", ("delta", "step", "bound"), curve)
    else:
        adj, _, _ = materialize(cfg, run.base_dir)
        mats = [build_matrix(adj, p) for p in cfg["environment"]["matrices"]]
        for dl in deltas:
            for eps in tr["epsilons"]:
                try:
                    w = worst_case_adaptation_time(model, mats, dl, eps)
                    T, case, K1 = w.T, "unfavorable", w.K1
                except ParameterError:
                    T, case, K1 = None, "inadmissible", None
                rows.append((_f(dl), _f(eps), case, _f(K1), "", _f(T),
                             _f(None if T is None else T * dl)))
    run.write("adaptation.csv", ("delta", "epsilon", "case", "K1", "K2", "T_ASL", "c"), rows,
              {"Phi": d.Phi, "kappa": net.kappa, "beta": net.beta})
    return rows


def cmd_nonstationary(run):
    cfg = run.cfg
    env_cfg = cfg["environment"]
    adj, _, model = materialize(cfg, run.base_dir)
    mats = tuple(build_matrix(adj, p) for p in env_cfg["matrices"])
    process = RegimeProcess(env_cfg["q_hyp"], env_cfg["q_mat"], env_cfg["q_fun"],
                            model.n_hypotheses)
    ini = env_cfg["initial"]
    if ini["hypothesis"] > model.n_hypotheses:
        raise ConfigError("environment.initial.hypothesis exceeds the hypothesis count")
    env = Environment(process, mats,
                      PerturbationModel(env_cfg["sigma_perturbed"], env_cfg["sigma_bad"]),
                      RegimeState(ini["hypothesis"] - 1, ini["matrix"] - 1,
                                  FUNCTIONING[ini["functioning"]]))
    st = run.strategy()
    adaptive = st if st.kind is not StrategyKind.TRADITIONAL else Strategy.asl(0.1)
    rec_rows = []
    for name, strat in (("asl", adaptive), ("traditional", Strategy.traditional())):
        rec = run_nonstationary(model, env, strat, env_cfg["horizon"], run.seed,
                                record_every=cfg["record_every"])
        buf = io.StringIO()
        rec.write_csv(buf)
        lines = buf.getvalue().splitlines()
        run.write(f"trajectory_{name}.csv", lines[0].split(","),
                  (l.split(",") for l in lines[1:]), {"strategy": strat.label()})
        stats = recovery_time_statistics(rec, env_cfg["persistence"], model.n_hypotheses)
        for c in stats.changes:
            rec_rows.append((name, c.step, c.old + 1, c.new + 1, c.preceding,
                             "" if c.duration is None else c.duration, int(c.bad),
                             int(c.censored)))
    run.write("recovery.csv", ("strategy", "change_step", "old", "new", "preceding_steps",
                               "recovery_steps", "bad", "censored"), rec_rows)
    cs = worst_case_cycle_stats(env_cfg["q_hyp"], env_cfg["q_mat"], env_cfg["q_fun"])
    soj = simulate_sojourns(process, env_cfg["sojourns"], seed=run.seed)
    run.write("cycles.csv", ("q_star", "T_LC", "diverged", "sojourn_mean", "sojourn_stderr",
                             "sojourns"),
              [(_f(cs.q_star), _f(cs.T_LC), int(cs.diverged), _f(soj.mean()),
                _f(soj.std(ddof=1) / math.sqrt(len(soj)) if len(soj) > 1 else 0.0), len(soj))])
    return cs


def _cache_get(path, key):
    try:
        data = json.loads(path.read_text())
    except (OSError, ValueError):
        return None
    return data if data.get("key") == key else None


def cmd_sweep(run):
    """Sweep the step size or the combination policy, caching each point."""
    cfg = run.cfg
    sw = cfg["sweep"]
    cache_dir = run.out / ".cache"
    cache_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    hits = 0
    if sw["axis"] == "delta":
        values = expand_grid(sw["values"] if sw["values"] is not None else cfg["mc"]["deltas"])
        _, a, model = materialize(cfg, run.base_dir)
        wrong = [th + 1 for th in range(model.n_hypotheses) if th != run.theta0]
        for dl in values:
            key = {"axis": "delta", "value": dl, "network": cfg["network"],
                   "models": cfg["models"], "theta0": cfg["theta0"]}
            h = config_hash(key)
            path = cache_dir / f"{h}.json"
            got = _cache_get(path, key)
            if got is None:
                mk, Ck = refined_moments(model, a, dl, run.theta0)
                got = {"key": key, "m": mk.tolist(), "C": Ck.tolist()}
                path.write_text(json.dumps(got, sort_keys=True))
            else:
                hits += 1
            for k, (m, C) in enumerate(zip(got["m"], got["C"])):
                for j in range(len(m)):
                    rows.append((_f(dl), k + 1, wrong[j], _f(m[j]), _f(C[j][j])))
        run.write("sweep.csv", ("delta", "agent", "theta", "m_k_delta", "var_k_delta"),
                  rows, {"axis": "delta"})
    else:
        values = sw["values"] if sw["values"] is not None else ["averaging", "laplacian"]
        for pol in values:
            key = {"axis": "policy", "value": pol, "network": cfg["network"],
                   "models": cfg["models"], "theta0": cfg["theta0"]}
            h = config_hash(key)
            path = cache_dir / f"{h}.json"
            got = _cache_get(path, key)
            if got is None:
                _, a, model = materialize(cfg, run.base_dir, policy=pol)
                net = analyze_network(a)
                d = steady_state_descriptors(model, a, run.theta0, analysis=net)
                got = {"key": key, "wrong": [th + 1 for th in d.wrong],
                       "Phi_theta": d.Phi_theta.tolist(), "t_star": d.t_star.tolist(),
                       "m_ave": d.m_ave.tolist(), "beta2": net.beta2_magnitude}
                path.write_text(json.dumps(got, sort_keys=True))
            else:
                hits += 1
            for th, p, t, m in zip(got["wrong"], got["Phi_theta"], got["t_star"], got["m_ave"]):
                rows.append((pol, th, _f(m), _f(t), _f(p), _f(min(got["Phi_theta"])),
                             _f(got["beta2"])))
        run.write("sweep.csv", ("policy", "theta", "m_ave", "t_star", "Phi_theta", "Phi",
                                "beta2"), rows, {"axis": "policy"})
    run.cache_hits = hits
    return rows


HANDLERS = {"simulate": cmd_simulate, "steady-state": cmd_steady_state,
            "exponents": cmd_exponents, "transient": cmd_transient,
            "nonstationary": cmd_nonstationary, "sweep": cmd_sweep}


# entry point ----------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="asl", description="Adaptive social learning experiments.")
    p.add_argument("--version", action="version", version=f"asl {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, type=Path)
        s.add_argument("--out", type=Path, default=Path("out"))
        s.add_argument("--seed", type=int)
        s.add_argument("--workers", type=int, default=1)
        s.add_argument("--delta", type=float)
        s.add_argument("--reps", type=int)
    return p


def apply_overrides(raw, args):
    """Fold command-line overrides into the raw config before validation."""
    raw = dict(raw or {})
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.delta is not None:
        raw["strategy"] = {**raw.get("strategy", {}), "delta": args.delta}
        for sec in ("mc", "transient"):
            raw[sec] = {**raw.get(sec, {}), "deltas": [args.delta]}
        raw["steady_state"] = {**raw.get("steady_state", {}), "clt_deltas": [args.delta]}
    if args.reps is not None:
        raw["mc"] = {**raw.get("mc", {}), "reps": args.reps}
        raw["steady_state"] = {**raw.get("steady_state", {}), "clt_reps": args.reps}
    return raw


def run_command(argv):
    args = build_parser().parse_args(argv)
    if args.workers < 1:
        raise ConfigError("--workers must be at least 1")
    text = args.config.read_text()
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {args.config}: {exc}") from None
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    cfg = normalize(apply_overrides(raw, args))
    run = Run(cfg, args.config.parent, args.out, args.workers, args.command)
    HANDLERS[args.command](run)
    return run


def main(argv=None):
    try:
        run = run_command(argv)
    except ValidationError as exc:
        print(f"asl: invalid input: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"asl: numerical failure: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"asl: I/O error: {exc}", file=sys.stderr)
        return 4
    for path in run.written:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())

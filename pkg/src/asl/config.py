"""Experiment configuration: parsing, validation, canonical form and hashing.

Configs are YAML (or JSON) mappings.  Hypothesis and agent numbers are
1-based, as in the text formats.  ``normalize`` returns the canonical,
fully defaulted mapping; parsing that mapping again yields the same
structure, and its hash identifies the experiment in every output.
"""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigError
from .graph import build_averaging_matrix, build_laplacian_matrix, load_edge_list
from .models import load_model_assignment
from . import setups

POLICIES = ("averaging", "laplacian")
KINDS = ("asl", "traditional", "flattened")

DEFAULTS = {
    "network": {"preset": "ten_agent", "policy": "averaging"},
    "models": {"preset": "reference", "spacing": 0.1},
    "strategy": {"kind": "asl", "delta": 0.1},
    "theta0": 1,
    "horizon": 400,
    "change_points": [],
    "seed": 0,
    "record_every": 1,
    "mc": {"deltas": {"min": 1 / 150, "max": 0.1, "num": 10}, "reps": 1000,
           "horizon_factor": 10.0, "thin": 1, "run": False},
    "steady_state": {"sweep": {"min": 0.001, "max": 1.0, "num": 50}, "sweep_horizon": 8000,
                     "clt_deltas": [0.1, 0.05, 0.01, 0.005], "clt_reps": 100},
    "transient": {"deltas": [0.1, 0.05, 0.01], "epsilons": [0.5], "bound_factor": 5.0,
                  "initial": "uniform"},
    "environment": {"q_hyp": 5e-3, "q_mat": 1e-3, "q_fun": 1e-3, "sigma_perturbed": 0.5,
                    "sigma_bad": 5.0, "matrices": ["averaging", "laplacian"],
                    "initial": {"hypothesis": 1, "matrix": 1, "functioning": "nominal"},
                    "horizon": 5000, "sojourns": 100000, "persistence": 10},
    "sweep": {"axis": "delta", "values": None},
}


SECTIONS = ("strategy", "mc", "steady_state", "transient", "environment", "sweep")


def _merge(base, over):
    """Overlay user keys on the defaults, one level deep inside each section."""
    out = copy.deepcopy(base)
    for key, val in over.items():
        if key not in base:
            raise ConfigError(f"unknown config key {key!r}")
        if key in SECTIONS:
            if not isinstance(val, dict):
                raise ConfigError(f"{key} must be a mapping")
            for sub, v in val.items():
                if sub not in base[key]:
                    raise ConfigError(f"unknown config key '{key}.{sub}'")
                out[key][sub] = copy.deepcopy(v)
        else:
            out[key] = copy.deepcopy(val)
    return out


def _num(x, name, lo=None, hi=None, integer=False, lo_open=False, hi_open=False):
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise ConfigError(f"{name} must be a number, got {x!r}")
    if integer and int(x) != x:
        raise ConfigError(f"{name} must be an integer, got {x!r}")
    if lo is not None and (x < lo or (lo_open and x == lo)):
        raise ConfigError(f"{name}={x} below its range")
    if hi is not None and (x > hi or (hi_open and x == hi)):
        raise ConfigError(f"{name}={x} above its range")
    return int(x) if integer else float(x)


def grid(spec, name):
    """A list of step sizes, or ``{min, max, num}`` for a log-spaced grid."""
    if isinstance(spec, dict):
        extra = set(spec) - {"min", "max", "num"}
        if extra or len(spec) != 3:
            raise ConfigError(f"{name} grid needs exactly min, max, num")
        lo = _num(spec["min"], f"{name}.min", 0, 1, lo_open=True)
        hi = _num(spec["max"], f"{name}.max", lo, 1)
        num = _num(spec["num"], f"{name}.num", 1, integer=True)
        return {"min": lo, "max": hi, "num": num}
    if not isinstance(spec, (list, tuple)) or not spec:
        raise ConfigError(f"{name} must be a non-empty list or a min/max/num grid")
    return [_num(d, f"{name} entry", 0, 1, lo_open=True) for d in spec]


def expand_grid(spec):
    if isinstance(spec, dict):
        return [float(v) for v in np.geomspace(spec["min"], spec["max"], spec["num"])]
    return list(spec)


def _source(block, name, presets):
    if not isinstance(block, dict):
        raise ConfigError(f"{name} must be a mapping")
    keys = set(block)
    path_key = "edges" if name == "network" else "assignment"
    allowed = {"preset", path_key} | ({"policy"} if name == "network" else {"spacing", "family"})
    if keys - allowed:
        raise ConfigError(f"unknown keys in {name}: {sorted(keys - allowed)}")
    if ("preset" in block) == (path_key in block):
        raise ConfigError(f"{name} needs exactly one of 'preset' or '{path_key}'")
    out = {}
    if "preset" in block:
        if block["preset"] not in presets:
            raise ConfigError(f"unknown {name} preset {block['preset']!r}; choose from {presets}")
        out["preset"] = block["preset"]
    else:
        if not isinstance(block[path_key], str):
            raise ConfigError(f"{name}.{path_key} must be a path")
        out[path_key] = block[path_key]
    return out


def normalize(raw):
    """Validate ``raw`` and return the canonical config mapping."""
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    cfg = _merge(DEFAULTS, raw)
    net = _source(cfg["network"], "network", ("ten_agent", "reduced5"))
    policy = cfg["network"].get("policy", "averaging")
    if policy not in POLICIES:
        raise ConfigError(f"network.policy must be one of {POLICIES}")
    net["policy"] = policy
    cfg["network"] = net
    mod = _source(cfg["models"], "models", ("reference", "reduced5"))
    if mod.get("preset") == "reference":
        mod["spacing"] = _num(cfg["models"].get("spacing", 0.1), "models.spacing", 0, lo_open=True)
    elif "spacing" in cfg["models"] and "preset" not in mod:
        raise ConfigError("models.spacing applies only to the reference preset")
    if "family" in cfg["models"]:
        if cfg["models"]["family"] not in ("laplace", "gaussian"):
            raise ConfigError("models.family must be laplace or gaussian")
        mod["family"] = cfg["models"]["family"]
    cfg["models"] = mod
    st = cfg["strategy"]
    if st.get("kind") not in KINDS:
        raise ConfigError(f"strategy.kind must be one of {KINDS}")
    if st["kind"] == "traditional":
        st["delta"] = None
    else:
        st["delta"] = _num(st.get("delta"), "strategy.delta", 0, 1, lo_open=True)
    cfg["theta0"] = _num(cfg["theta0"], "theta0", 1, integer=True)
    cfg["horizon"] = _num(cfg["horizon"], "horizon", 1, integer=True)
    cfg["seed"] = _num(cfg["seed"], "seed", 0, 2 ** 64 - 1, integer=True)
    cfg["record_every"] = _num(cfg["record_every"], "record_every", 1, integer=True)
    cps = []
    for cp in cfg["change_points"]:
        if not isinstance(cp, (list, tuple)) or len(cp) != 2:
            raise ConfigError("change_points entries must be [step, hypothesis]")
        cps.append([_num(cp[0], "change step", 1, integer=True),
                    _num(cp[1], "change hypothesis", 1, integer=True)])
    if [c[0] for c in cps] != sorted({c[0] for c in cps}):
        raise ConfigError("change_points must have strictly increasing steps")
    cfg["change_points"] = cps
    mc = cfg["mc"]
    mc["deltas"] = grid(mc["deltas"], "mc.deltas")
    mc["reps"] = _num(mc["reps"], "mc.reps", 1, integer=True)
    mc["horizon_factor"] = _num(mc["horizon_factor"], "mc.horizon_factor", 1)
    mc["thin"] = _num(mc["thin"], "mc.thin", 1, integer=True)
    if not isinstance(mc["run"], bool):
        raise ConfigError("mc.run must be true or false")
    ss = cfg["steady_state"]
    ss["sweep"] = grid(ss["sweep"], "steady_state.sweep")
    ss["sweep_horizon"] = _num(ss["sweep_horizon"], "steady_state.sweep_horizon", 1, integer=True)
    ss["clt_deltas"] = grid(ss["clt_deltas"], "steady_state.clt_deltas")
    ss["clt_reps"] = _num(ss["clt_reps"], "steady_state.clt_reps", 2, integer=True)
    tr = cfg["transient"]
    tr["deltas"] = grid(tr["deltas"], "transient.deltas")
    if not isinstance(tr["epsilons"], list) or not tr["epsilons"]:
        raise ConfigError("transient.epsilons must be a non-empty list")
    tr["epsilons"] = [_num(e, "epsilon", 0, 1, lo_open=True, hi_open=True) for e in tr["epsilons"]]
    tr["bound_factor"] = _num(tr["bound_factor"], "transient.bound_factor", 0, lo_open=True)
    if tr["initial"] not in ("uniform", "worst_case"):
        raise ConfigError("transient.initial must be 'uniform' or 'worst_case'")
    env = cfg["environment"]
    for q in ("q_hyp", "q_mat", "q_fun"):
        env[q] = _num(env[q], f"environment.{q}", 0, 0.5, hi_open=True)
    env["sigma_perturbed"] = _num(env["sigma_perturbed"], "environment.sigma_perturbed", 0)
    env["sigma_bad"] = _num(env["sigma_bad"], "environment.sigma_bad", 0)
    if env["sigma_perturbed"] >= env["sigma_bad"]:
        raise ConfigError("environment.sigma_perturbed must be below sigma_bad")
    if (not isinstance(env["matrices"], list) or len(env["matrices"]) != 2
            or any(m not in POLICIES for m in env["matrices"])):
        raise ConfigError(f"environment.matrices must list two policies from {POLICIES}")
    ini = env["initial"]
    if not isinstance(ini, dict) or set(ini) - {"hypothesis", "matrix", "functioning"}:
        raise ConfigError("environment.initial takes hypothesis, matrix, functioning")
    ini = {**DEFAULTS["environment"]["initial"], **ini}
    ini["hypothesis"] = _num(ini["hypothesis"], "environment.initial.hypothesis", 1, integer=True)
    ini["matrix"] = _num(ini["matrix"], "environment.initial.matrix", 1, 2, integer=True)
    if ini["functioning"] not in ("nominal", "perturbed", "bad"):
        raise ConfigError("environment.initial.functioning must be nominal, perturbed or bad")
    env["initial"] = ini
    env["horizon"] = _num(env["horizon"], "environment.horizon", 1, integer=True)
    env["sojourns"] = _num(env["sojourns"], "environment.sojourns", 1, integer=True)
    env["persistence"] = _num(env["persistence"], "environment.persistence", 1, integer=True)
    sw = cfg["sweep"]
    if sw["axis"] not in ("delta", "policy"):
        raise ConfigError("sweep.axis must be 'delta' or 'policy'")
    if sw["values"] is not None:
        if sw["axis"] == "delta":
            sw["values"] = grid(sw["values"], "sweep.values")
        elif not isinstance(sw["values"], list) or any(v not in POLICIES for v in sw["values"]):
            raise ConfigError(f"sweep.values must list policies from {POLICIES}")
    return cfg


def canonical_json(cfg):
    return json.dumps(cfg, sort_keys=True, separators=(",", ":"))


def config_hash(cfg):
    return hashlib.sha256(canonical_json(cfg).encode()).hexdigest()[:16]


def load_config(path):
    """Read and validate a config file; returns ``(cfg, base_dir)``."""
    path = Path(path)
    text = path.read_text()
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    return normalize(raw), path.parent


def dump_config(cfg):
    return json.dumps(cfg, sort_keys=True, indent=2) + "\n"


# materialization -----------------------------------------------------------

def _resolve(base_dir, p):
    p = Path(p)
    return p if p.is_absolute() or base_dir is None else Path(base_dir) / p


def build_adjacency(cfg, base_dir=None):
    net = cfg["network"]
    if "preset" in net:
        if net["preset"] == "ten_agent":
            return setups.ten_agent_adjacency()
        return setups.reduced5()[0]
    return load_edge_list(_resolve(base_dir, net["edges"]))


def build_matrix(adj, policy):
    return build_averaging_matrix(adj) if policy == "averaging" else build_laplacian_matrix(adj)


def build_model(cfg, base_dir=None):
    mod = cfg["models"]
    if "preset" in mod:
        model = setups.reference_model(mod["spacing"]) if mod["preset"] == "reference" \
            else setups.reduced5()[1]
        if mod.get("family", model.family) != model.family:
            from .models import FAMILIES
            model = FAMILIES[mod["family"]](model.params)
        return model
    return load_model_assignment(_resolve(base_dir, mod["assignment"]), mod.get("family"))


def materialize(cfg, base_dir=None, policy=None):
    """Return ``(adjacency, matrix, model)`` after cross-checking sizes."""
    adj = build_adjacency(cfg, base_dir)
    model = build_model(cfg, base_dir)
    if model.n_agents != adj.n:
        raise ConfigError(f"network has {adj.n} agents but the model assigns {model.n_agents}")
    if cfg["theta0"] > model.n_hypotheses:
        raise ConfigError(f"theta0={cfg['theta0']} exceeds the {model.n_hypotheses} hypotheses")
    a = build_matrix(adj, policy or cfg["network"]["policy"])
    return adj, a, model


def parse_text(text):
    """Parse a YAML/JSON string into a canonical config (for round-trip checks)."""
    try:
        return normalize(yaml.safe_load(text))
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config: {exc}") from None

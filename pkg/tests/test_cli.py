import csv
import json

import pytest
import yaml
from hypothesis import given, settings, strategies as st

from asl import cli
from asl.config import DEFAULTS, config_hash, dump_config, normalize, parse_text
from asl.errors import ConfigError, RootBracketingError


def write_cfg(tmp_path, cfg, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(cfg))
    return path


def run(tmp_path, command, cfg, out="out", extra=()):
    path = write_cfg(tmp_path, cfg)
    return cli.main([command, "--config", str(path), "--out", str(tmp_path / out), *extra])


def read_csv(path):
    lines = path.read_text().splitlines()
    return lines[0], list(csv.DictReader(lines[1:]))


SMALL = {"network": {"preset": "reduced5"}, "models": {"preset": "reduced5"},
         "strategy": {"kind": "asl", "delta": 0.2}, "horizon": 60}


def test_config_round_trip():
    cfg = normalize({"strategy": {"kind": "traditional"}, "change_points": [[200, 3]],
                     "mc": {"deltas": [0.1, 0.05]}})
    assert parse_text(dump_config(cfg)) == cfg
    assert normalize(json.loads(json.dumps(cfg))) == cfg
    assert config_hash(parse_text(dump_config(cfg))) == config_hash(cfg)


@settings(max_examples=40, deadline=None)
@given(st.floats(1e-4, 1.0), st.integers(1, 10 ** 6), st.integers(0, 2 ** 63),
       st.sampled_from(["asl", "flattened", "traditional"]),
       st.sampled_from(["averaging", "laplacian"]))
def test_config_round_trip_property(delta, horizon, seed, kind, policy):
    cfg = normalize({"strategy": {"kind": kind, "delta": delta}, "horizon": horizon,
                     "seed": seed, "network": {"preset": "ten_agent", "policy": policy}})
    assert parse_text(dump_config(cfg)) == cfg


@pytest.mark.parametrize("raw", [
    {"bogus": 1}, {"horizon": 0}, {"strategy": {"kind": "asl", "delta": 0}},
    {"strategy": {"kind": "nope"}}, {"network": {"preset": "ten_agent", "edges": "x"}},
    {"network": {"preset": "mystery"}}, {"change_points": [[5, 2], [5, 3]]},
    {"environment": {"q_hyp": 0.5}}, {"environment": {"sigma_perturbed": 9.0}},
    {"mc": {"deltas": {"min": 0.1, "max": 0.01, "num": 3}}}, {"seed": -1},
    {"transient": {"epsilons": [1.0]}}, {"sweep": {"axis": "policy", "values": ["x"]}},
    [1, 2], {"theta0": 1.5},
])
def test_invalid_configs(raw):
    with pytest.raises(ConfigError):
        normalize(raw)


def test_defaults_are_valid():
    assert normalize({})["network"] == DEFAULTS["network"]


def test_simulate_outputs_and_reproducibility(tmp_path):
    cfg = dict(SMALL, change_points=[[30, 2]], seed=5)
    assert run(tmp_path, "simulate", cfg, "a") == 0
    assert run(tmp_path, "simulate", cfg, "b") == 0
    for name in ("trajectory.csv", "recovery.csv"):
        a = (tmp_path / "a" / name).read_text()
        assert a == (tmp_path / "b" / name).read_text()
        side_a = (tmp_path / "a" / name).with_suffix(".json").read_text()
        assert side_a == (tmp_path / "b" / name).with_suffix(".json").read_text()
    header, rows = read_csv(tmp_path / "a" / "trajectory.csv")
    cfg_hash = config_hash(normalize(cfg))
    assert header == f"# asl 0.1.0 config={cfg_hash} seed=5"
    assert len(rows) == 60 * 5 * 3
    side = json.loads((tmp_path / "a" / "trajectory.json").read_text())
    assert side["config_hash"] == cfg_hash and side["config"] == normalize(cfg)
    _, rec = read_csv(tmp_path / "a" / "recovery.csv")
    assert rec[0]["change_step"] == "31" and rec[0]["new"] == "2"


def test_seed_override_changes_output(tmp_path):
    assert run(tmp_path, "simulate", SMALL, "a") == 0
    assert run(tmp_path, "simulate", SMALL, "b", ["--seed", "99"]) == 0
    ta = (tmp_path / "a" / "trajectory.csv").read_text()
    tb = (tmp_path / "b" / "trajectory.csv").read_text()
    assert ta != tb and "seed=99" in tb.splitlines()[0]


def test_exit_codes(tmp_path, monkeypatch):
    assert run(tmp_path, "simulate", dict(SMALL, horizon=0)) == 2
    assert run(tmp_path, "simulate", {"bogus": True}) == 2
    assert run(tmp_path, "exponents", dict(SMALL, theta0=4)) == 2
    assert cli.main(["simulate", "--config", str(tmp_path / "missing.yaml")]) == 4
    (tmp_path / "broken.yaml").write_text("network: [unclosed\n")
    assert cli.main(["simulate", "--config", str(tmp_path / "broken.yaml")]) == 2
    assert run(tmp_path, "simulate", {"network": {"edges": "nowhere.edges"}}) == 4

    def fail(*a, **k):
        raise RootBracketingError("no sign change")
    monkeypatch.setattr(cli, "steady_state_descriptors", fail)
    assert run(tmp_path, "exponents", SMALL) == 3
    with pytest.raises(SystemExit) as info:
        cli.main(["simulate"])
    assert info.value.code == 2


def test_custom_files(tmp_path):
    (tmp_path / "net.edges").write_text("agents 2\n1 1\n2 2\n1 2\n2 1\n")
    (tmp_path / "m.models").write_text("1-2 1 0\n1-2 2 1\n")
    cfg = {"network": {"edges": "net.edges", "policy": "laplacian"},
           "models": {"assignment": "m.models"}, "horizon": 10}
    assert run(tmp_path, "simulate", cfg) == 0
    # laplacian on two agents is periodic
    assert run(tmp_path, "exponents", cfg) == 2
    cfg["network"]["policy"] = "averaging"
    assert run(tmp_path, "exponents", cfg) == 0
    (tmp_path / "m.models").write_text("1-3 1 0\n1-3 2 1\n")
    assert run(tmp_path, "simulate", cfg) == 2


def test_exponents_command(tmp_path):
    cfg = {"mc": {"deltas": [0.1]}}
    assert run(tmp_path, "exponents", cfg) == 0
    _, rows = read_csv(tmp_path / "out" / "exponents.csv")
    assert float(rows[0]["Phi_theta"]) == pytest.approx(0.03348, abs=1e-4)
    assert float(rows[1]["Phi_theta"]) == pytest.approx(0.05051, abs=1e-4)
    _, rows = read_csv(tmp_path / "out" / "gaussian_curve.csv")
    assert len(rows) == 10


def test_exponents_with_mc(tmp_path):
    cfg = dict(SMALL, mc={"deltas": [0.5, 0.3, 0.2, 0.15], "reps": 300, "run": True})
    assert run(tmp_path, "exponents", cfg, extra=["--workers", "2"]) == 0
    _, rows = read_csv(tmp_path / "out" / "mc_error.csv")
    assert len(rows) == 4 * 5 and rows[0]["reps"] == "300"
    _, rows = read_csv(tmp_path / "out" / "slope.csv")
    assert len(rows) == 5


def test_steady_state_command(tmp_path):
    cfg = dict(SMALL, steady_state={"sweep": {"min": 0.05, "max": 1.0, "num": 3},
                                    "sweep_horizon": 200, "clt_deltas": [0.2], "clt_reps": 20})
    assert run(tmp_path, "steady-state", cfg) == 0
    _, rows = read_csv(tmp_path / "out" / "concentration.csv")
    assert len(rows) == 3 * 5 * 2
    _, rows = read_csv(tmp_path / "out" / "clt.csv")
    assert len(rows) == 5 * 2 * 2
    assert run(tmp_path, "steady-state", dict(cfg, strategy={"kind": "traditional"})) == 2


def test_steady_state_reps_override(tmp_path):
    cfg = dict(SMALL, steady_state={"sweep": [0.5], "sweep_horizon": 50, "clt_deltas": [0.3],
                                    "clt_reps": 20})
    assert run(tmp_path, "steady-state", cfg, extra=["--reps", "7", "--delta", "0.4"]) == 0
    side = json.loads((tmp_path / "out" / "clt.json").read_text())
    assert side["config"]["steady_state"]["clt_reps"] == 7
    assert side["config"]["steady_state"]["clt_deltas"] == [0.4]


def test_transient_commands(tmp_path):
    assert run(tmp_path, "transient", {"transient": {"deltas": [0.1, 0.05],
                                                     "epsilons": [0.5, 0.99]}}) == 0
    _, rows = read_csv(tmp_path / "out" / "adaptation.csv")
    assert len(rows) == 4 and rows[0]["case"] == "unfavorable"
    _, rows = read_csv(tmp_path / "out" / "bound.csv")
    assert float(rows[0]["bound"]) <= 1.0
    cfg = {"models": {"preset": "reference", "spacing": 1.0},
           "transient": {"deltas": [0.1], "epsilons": [0.5], "initial": "worst_case"}}
    assert run(tmp_path, "transient", cfg, "w") == 0
    _, rows = read_csv(tmp_path / "w" / "adaptation.csv")
    assert float(rows[0]["c"]) > 0


def test_nonstationary_command(tmp_path):
    cfg = {"models": {"preset": "reference", "spacing": 1.0}, "record_every": 50,
           "environment": {"horizon": 400, "sojourns": 2000, "q_hyp": 0.02}}
    assert run(tmp_path, "nonstationary", cfg) == 0
    out = tmp_path / "out"
    for name in ("trajectory_asl.csv", "trajectory_traditional.csv", "recovery.csv",
                 "cycles.csv"):
        assert (out / name).exists() and (out / name).with_suffix(".json").exists()
    _, rows = read_csv(out / "cycles.csv")
    assert float(rows[0]["T_LC"]) > 0
    _, rows = read_csv(out / "trajectory_asl.csv")
    assert {r["regime_functioning"] for r in rows} <= {"nominal", "perturbed", "bad"}


def test_sweep_cache(tmp_path):
    cfg = {"sweep": {"axis": "policy", "values": ["averaging", "laplacian"]}}
    path = write_cfg(tmp_path, cfg)
    argv = ["sweep", "--config", str(path), "--out", str(tmp_path / "out")]
    first = cli.run_command(argv)
    body = (tmp_path / "out" / "sweep.csv").read_text()
    second = cli.run_command(argv)
    assert first.cache_hits == 0 and second.cache_hits == 2
    assert (tmp_path / "out" / "sweep.csv").read_text() == body
    _, rows = read_csv(tmp_path / "out" / "sweep.csv")
    assert float(rows[0]["Phi_theta"]) == pytest.approx(0.03348, abs=1e-4)
    cfg = dict(SMALL, sweep={"axis": "delta", "values": [0.1, 0.2]})
    argv = ["sweep", "--config", str(write_cfg(tmp_path, cfg, "d.yaml")), "--out",
            str(tmp_path / "d")]
    assert cli.run_command(argv).cache_hits == 0
    assert cli.run_command(argv).cache_hits == 2


def _recovery(tmp_path, kind, seed):
    cfg = {"models": {"preset": "reference", "spacing": 1.0}, "strategy": {"kind": kind},
           "change_points": [[200, 3]], "horizon": 900, "seed": seed, "record_every": 900}
    assert run(tmp_path, "simulate", cfg, f"{kind}{seed}") == 0
    _, rows = read_csv(tmp_path / f"{kind}{seed}" / "recovery.csv")
    return int(rows[0]["recovery_steps"])


def test_stubbornness_contrast_through_cli(tmp_path):
    for seed in range(3):
        asl = _recovery(tmp_path, "asl", seed)
        trad = _recovery(tmp_path, "traditional", seed)
        assert asl <= 3 / 0.1
        assert trad > 2 * asl

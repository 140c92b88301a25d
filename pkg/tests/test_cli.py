"""End-to-end command line tests: outputs, determinism, exit codes."""

import json

import pytest

from rampflow.cli import (
    EXIT_CONTRACT,
    EXIT_MISMATCH,
    EXIT_OK,
    EXIT_SCENARIO,
    EXIT_UNSUPPORTED,
    main,
)

# ---------------------------------------------------------------------------
# fixture scenario files

_DROP_YAML = """\
label: droptoy
dt_seconds: 15
cells:
  - {length: 0.5, v_free: 90, rho_crit: 50, rho_jam: 350, ramp_flow_max: 1200,
     queue_max: 80, capacity_drop: 0.1}
demand:
  piecewise:
    w0:
      - {from_min: 0, to_min: 10, value: 2500}
    w1:
      - {from_min: 0, to_min: 5, value: 600}
  steps: 120
"""

# sustained arrivals above the metering cap with a tiny queue box: the
# feasible rate interval empties mid-run and the simulation must abort
_OVERLOAD_YAML = """\
label: overload
dt_seconds: 15
cells:
  - {length: 0.5, v_free: 90, rho_crit: 50, rho_jam: 350, ramp_flow_max: 600,
     queue_max: 5}
demand:
  piecewise:
    w0:
      - {from_min: 0, to_min: 10, value: 500}
    w1:
      - {from_min: 0, to_min: 10, value: 1800}
  steps: 120
"""

_ONECELL_180_YAML = """\
label: onecell
dt_seconds: 20
cells:
  - {length: 1.0, v_free: 100, rho_crit: 50, rho_jam: 250, ramp_flow_max: 900,
     queue_max: 40}
demand:
  synth:
    horizon_steps: 180
    mainline_peak: 2000
    mainline_base: 500
"""


@pytest.fixture
def drop_yaml(tmp_path):
    p = tmp_path / "drop.yaml"
    p.write_text(_DROP_YAML, encoding="utf-8")
    return str(p)


@pytest.fixture
def overload_yaml(tmp_path):
    p = tmp_path / "overload.yaml"
    p.write_text(_OVERLOAD_YAML, encoding="utf-8")
    return str(p)


def _read(path):
    with open(path, "rb") as fh:
        return fh.read()


# ---------------------------------------------------------------------------
# simulate

def test_simulate_stdout_csv_and_metrics_line(capsys):
    assert main(["simulate", "--scenario", "builtin:example1"]) == EXIT_OK
    captured = capsys.readouterr()
    lines = captured.out.splitlines()
    assert lines[0] == "t,cell,rho,q,phi,r"
    # (T+1) * n data rows for the fixture: 181 * 2
    assert len(lines) == 1 + 181 * 2
    assert captured.err.startswith("tts=")
    assert "twt=" in captured.err


def test_simulate_outputs_byte_deterministic(tmp_path):
    outs = []
    for tag in ("a", "b"):
        traj = tmp_path / f"traj_{tag}.csv"
        heat = tmp_path / f"heat_{tag}.csv"
        rep = tmp_path / f"rep_{tag}.json"
        code = main([
            "simulate", "--scenario", "builtin:example1",
            "--controller", "be", "--sigma-phi", "0.02", "--seed", "9",
            "--out", str(traj), "--heatmap", str(heat), "--report", str(rep),
        ])
        assert code == EXIT_OK
        outs.append((_read(traj), _read(heat), _read(rep)))
    assert outs[0] == outs[1]


def test_simulate_report_and_heatmap_contents(tmp_path):
    heat = tmp_path / "heat.csv"
    rep = tmp_path / "rep.json"
    code = main([
        "simulate", "--scenario", "builtin:example1", "--controller", "be",
        "--out", str(tmp_path / "t.csv"), "--heatmap", str(heat),
        "--report", str(rep),
    ])
    assert code == EXIT_OK
    heat_lines = _read(heat).decode().splitlines()
    assert heat_lines[0] == "t,cell,rho"
    assert len(heat_lines) == 1 + 180 * 2          # T rows per cell
    doc = json.loads(_read(rep))
    assert doc["scenario"] == "example1"
    assert doc["controller"] == "be"
    assert doc["horizon_steps"] == 180
    assert doc["seed"] == 0
    assert doc["tts"] > 0 and doc["tft"] > 0
    # each field is independently rounded to 9 significant digits
    assert doc["tts"] == pytest.approx(doc["tft"] + doc["twt"], rel=1e-7)
    assert 0.0 <= doc["restrictive_fraction"] <= 1.0
    assert isinstance(doc["interior_restrictive_free"], bool)
    assert abs(doc["mass_residual"]) < 1e-6


def test_simulate_relaxed_controller_runs():
    assert main(["simulate", "--scenario", "builtin:example1",
                 "--controller", "relaxed-be"]) == EXIT_OK


def test_simulate_contract_violation_exits_3(overload_yaml, capsys):
    code = main(["simulate", "--scenario", overload_yaml])
    assert code == EXIT_CONTRACT
    assert "error:" in capsys.readouterr().err


def test_simulate_missing_scenario_exits_2(tmp_path, capsys):
    assert main(["simulate", "--scenario",
                 str(tmp_path / "ghost.yaml")]) == EXIT_SCENARIO
    assert main(["simulate", "--scenario", "builtin:nope"]) == EXIT_SCENARIO


def test_simulate_demand_override_and_mismatch(tmp_path):
    # export the builtin demand, shift it, feed it back
    from rampflow.scenarios import builtin_example1, write_demand_csv
    sc = builtin_example1()
    good = tmp_path / "demand.csv"
    write_demand_csv(good, sc.demand)
    assert main(["simulate", "--scenario", "builtin:example1",
                 "--demand", str(good),
                 "--out", str(tmp_path / "o.csv")]) == EXIT_OK
    # wrong column count: one-ramp header against the two-cell model
    bad = tmp_path / "bad.csv"
    bad.write_text("t,w0,w1\n0,100,50\n", encoding="utf-8")
    assert main(["simulate", "--scenario", "builtin:example1",
                 "--demand", str(bad)]) == EXIT_MISMATCH
    # missing file is unusable input, not a shape problem
    assert main(["simulate", "--scenario", "builtin:example1",
                 "--demand", str(tmp_path / "none.csv")]) == EXIT_SCENARIO


# ---------------------------------------------------------------------------
# optimize

def test_optimize_writes_solution_and_exports(tmp_path):
    out = tmp_path / "sol.json"
    rates = tmp_path / "rates.csv"
    lp = tmp_path / "inst.lp"
    code = main([
        "optimize", "--scenario", "builtin:example1", "--out", str(out),
        "--rates", str(rates), "--export-lp", str(lp),
    ])
    assert code == EXIT_OK
    doc = json.loads(_read(out))
    assert doc["scenario"] == "example1"
    assert doc["exact"] is True
    assert doc["gap"] == pytest.approx(0.0, abs=1e-6)
    assert doc["variables"] == 180 * (4 * 2 + 1)
    assert doc["objective"] == pytest.approx(doc["simulated_tts"], rel=1e-7)
    rate_lines = _read(rates).decode().splitlines()
    assert rate_lines[0] == "t,r1,r2"
    assert len(rate_lines) == 1 + 180
    assert not any("-0," in ln or ln.endswith("-0") for ln in rate_lines)
    lp_text = _read(lp).decode()
    assert lp_text.startswith("Minimize")
    assert lp_text.rstrip().endswith("End")


def test_optimize_capacity_drop_unsupported(drop_yaml, capsys):
    assert main(["optimize", "--scenario", drop_yaml]) == EXIT_UNSUPPORTED
    assert "error:" in capsys.readouterr().err


def test_optimize_deterministic_bytes(tmp_path):
    outs = []
    for tag in ("a", "b"):
        out = tmp_path / f"sol_{tag}.json"
        rates = tmp_path / f"rates_{tag}.csv"
        assert main(["optimize", "--scenario", "builtin:example2",
                     "--out", str(out), "--rates", str(rates)]) == EXIT_OK
        outs.append((_read(out), _read(rates)))
    assert outs[0] == outs[1]


# ---------------------------------------------------------------------------
# bounds

def test_bounds_doc_and_restrictiveness_csv(tmp_path):
    out = tmp_path / "bounds.json"
    restr = tmp_path / "restr.csv"
    code = main(["bounds", "--scenario", "builtin:example1",
                 "--out", str(out), "--restrictiveness", str(restr)])
    assert code == EXIT_OK
    doc = json.loads(_read(out))
    assert set(doc) == {"tts_lb", "tts_be", "certificate", "gap_abs",
                        "gap_rel"}
    assert doc["tts_lb"] <= doc["tts_be"] + 1e-9
    assert doc["certificate"] in ("optimal", "bounded")
    assert doc["gap_abs"] == pytest.approx(doc["tts_be"] - doc["tts_lb"],
                                           rel=1e-6, abs=1e-7)
    lines = _read(restr).decode().splitlines()
    assert lines[0] == "t,cell,status,reason"
    statuses = {ln.split(",")[2] for ln in lines[1:]}
    assert statuses <= {"restrictive", "nonrestrictive"}


# ---------------------------------------------------------------------------
# report

def test_report_replays_saved_trajectory(tmp_path):
    traj = tmp_path / "traj.csv"
    rep_live = tmp_path / "live.json"
    assert main(["simulate", "--scenario", "builtin:example1",
                 "--controller", "be", "--out", str(traj),
                 "--report", str(rep_live)]) == EXIT_OK
    rep_replay = tmp_path / "replay.json"
    assert main(["report", "--scenario", "builtin:example1",
                 "--trajectory", str(traj),
                 "--out", str(rep_replay)]) == EXIT_OK
    live = json.loads(_read(rep_live))
    replay = json.loads(_read(rep_replay))
    assert replay["controller"] == "replay"
    # CSV stores 9 significant digits; metrics must agree to that precision
    assert replay["tts"] == pytest.approx(live["tts"], rel=1e-7)
    assert replay["twt"] == pytest.approx(live["twt"], rel=1e-6, abs=1e-6)
    assert replay["restrictive_fraction"] == pytest.approx(
        live["restrictive_fraction"], abs=1e-9)


def test_report_horizon_mismatch_exits_5(tmp_path, capsys):
    traj = tmp_path / "traj2.csv"
    assert main(["simulate", "--scenario", "builtin:example2",
                 "--out", str(traj)]) == EXIT_OK
    code = main(["report", "--scenario", "builtin:example1",
                 "--trajectory", str(traj)])
    assert code == EXIT_MISMATCH


def test_report_cell_count_mismatch_exits_5(tmp_path):
    onecell = tmp_path / "onecell.yaml"
    onecell.write_text(_ONECELL_180_YAML, encoding="utf-8")
    traj = tmp_path / "traj1.csv"
    assert main(["simulate", "--scenario", "builtin:example1",
                 "--out", str(traj)]) == EXIT_OK
    code = main(["report", "--scenario", str(onecell),
                 "--trajectory", str(traj)])
    assert code == EXIT_MISMATCH


def test_report_missing_trajectory_exits_2(tmp_path):
    assert main(["report", "--scenario", "builtin:example1",
                 "--trajectory", str(tmp_path / "ghost.csv")]) == EXIT_SCENARIO


# ---------------------------------------------------------------------------
# campaign

def test_campaign_csv_deterministic(tmp_path):
    outs = []
    for tag in ("a", "b"):
        out = tmp_path / f"camp_{tag}.csv"
        code = main([
            "campaign", "--scenario", "builtin:example1", "--runs", "2",
            "--sigmas", "0", "--variants", "monotonic", "--seed", "3",
            "--out", str(out),
        ])
        assert code == EXIT_OK
        outs.append(_read(out))
    assert outs[0] == outs[1]
    lines = outs[0].decode().splitlines()
    assert lines[0] == ("variant,sigma,dv,drho,controller,"
                        "mean_twt_improvement,stdev,runs")
    assert len(lines) == 1 + 5        # 4 mismatch points + alinea


def test_campaign_rejects_unknown_variant(capsys):
    code = main(["campaign", "--scenario", "builtin:example1",
                 "--variants", "cursed", "--runs", "1"])
    assert code == EXIT_SCENARIO


def test_campaign_threads_env_default(monkeypatch):
    from rampflow.cli import build_parser
    monkeypatch.setenv("RAMPFLOW_THREADS", "7")
    args = build_parser().parse_args(
        ["campaign", "--scenario", "builtin:example1"])
    assert args.threads == 7
    monkeypatch.setenv("RAMPFLOW_THREADS", "soup")
    args = build_parser().parse_args(
        ["campaign", "--scenario", "builtin:example1"])
    assert args.threads == 1


# ---------------------------------------------------------------------------
# validate

def test_validate_good_scenario(capsys):
    assert main(["validate", "--scenario", "builtin:grenoble"]) == EXIT_OK
    doc = json.loads(capsys.readouterr().out)
    assert doc["scenario"] == "grenoble"
    assert doc["cells"] == 21
    assert doc["violations"] == []


def test_validate_bad_scenario_exits_2(tmp_path, capsys):
    p = tmp_path / "bad.yaml"
    p.write_text("dt: 0.01\ncells: []\n", encoding="utf-8")
    assert main(["validate", "--scenario", str(p)]) == EXIT_SCENARIO
    assert "invalid:" in capsys.readouterr().err

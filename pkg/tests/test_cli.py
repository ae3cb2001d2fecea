import csv
import io
import json
import subprocess
import sys
from pathlib import Path

import pytest

from ehexit.cli import main

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"


def files(d: Path) -> dict:
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


def write_cfg(tmp_path, text, name="c.toml"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return str(p)


SMALL = """
seed = 3
[scenario]
trace = "bundled:solar_like.csv"
events = 120
[network]
source = "profile"
[runtime]
train_passes = 3
"""


def test_gen_trace_constant(tmp_path):
    out = tmp_path / "t.csv"
    assert main(["gen-trace", "--kind", "constant", "--param", "power_mw=2", "--param", "duration_s=100",
                 "--out", str(out)]) == 0
    rows = [r for r in out.read_text().splitlines() if not r.startswith("#")]
    assert rows[0].startswith("time_s")
    data = [tuple(map(float, r.split(","))) for r in rows[1:]]
    assert len(data) == 101 and all(p == 2.0 for _, p in data)
    assert data[0][0] == 0.0 and data[-1][0] == 100.0


def test_gen_trace_deterministic(tmp_path):
    a, b, c = tmp_path / "a.csv", tmp_path / "b.csv", tmp_path / "c.csv"
    main(["gen-trace", "--kind", "solar_like", "--seed", "7", "--out", str(a)])
    main(["gen-trace", "--kind", "solar_like", "--seed", "7", "--out", str(b)])
    main(["gen-trace", "--kind", "solar_like", "--seed", "8", "--out", str(c)])
    assert a.read_bytes() == b.read_bytes() != c.read_bytes()
    assert "seed=7" in a.read_text().splitlines()[0]


def test_bundled_trace_regenerates_from_seed(tmp_path):
    out = tmp_path / "s.csv"
    main(["gen-trace", "--kind", "solar_like", "--seed", "1", "--out", str(out)])
    bundled = (ROOT / "src" / "ehexit" / "data" / "solar_like.csv").read_bytes()
    assert out.read_bytes() == bundled


def test_simulate_outputs(tmp_path):
    cfg = write_cfg(tmp_path, SMALL)
    out = tmp_path / "sim"
    assert main(["simulate", "--config", cfg, "--out", str(out)]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["provenance"]["seed"] == 3 and len(rep["provenance"]["config_sha256"]) == 64
    agg = rep["report"]["aggregates"]
    assert agg["n_processed"] + agg["n_missed"] == 120
    lines = (out / "events.csv").read_text().splitlines()
    assert lines[0].startswith("# config_sha256=") and len(lines) == 2 + 120


@pytest.mark.parametrize("policy", ["static_lut", "q_learning", "q_learning+incremental"])
def test_runtime_outputs(tmp_path, policy):
    cfg = write_cfg(tmp_path, SMALL)
    out = tmp_path / "rt"
    assert main(["runtime", "--config", cfg, "--policy", policy, "--out", str(out)]) == 0
    names = set(files(out))
    assert {"report.json", "events.csv"} <= names
    if policy != "static_lut":
        assert {"qtables.json", "learning_curve.csv"} <= names
        q = json.loads((out / "qtables.json").read_text())
        assert ("continue" in q["tables"]) == (policy == "q_learning+incremental")


def test_rerun_is_byte_identical(tmp_path):
    cfg = write_cfg(tmp_path, SMALL)
    for cmd in (["simulate"], ["runtime", "--policy", "q_learning+incremental"]):
        main([*cmd, "--config", cfg, "--out", str(tmp_path / "a")])
        main([*cmd, "--config", cfg, "--out", str(tmp_path / "b")])
        assert files(tmp_path / "a") == files(tmp_path / "b")


def test_seed_flag_changes_output(tmp_path):
    cfg = write_cfg(tmp_path, SMALL)
    main(["simulate", "--config", cfg, "--out", str(tmp_path / "a")])
    main(["simulate", "--config", cfg, "--seed", "4", "--out", str(tmp_path / "b")])
    assert files(tmp_path / "a")["events.csv"] != files(tmp_path / "b")["events.csv"]


def test_report_has_delta_columns(tmp_path):
    cfg = write_cfg(tmp_path, SMALL)
    main(["simulate", "--config", cfg, "--selector", "final_exit", "--out", str(tmp_path / "f")])
    main(["simulate", "--config", cfg, "--selector", "static_lut", "--out", str(tmp_path / "g")])
    out = tmp_path / "cmp.csv"
    assert main(["report", str(tmp_path / "f"), str(tmp_path / "g"), "--out", str(out)]) == 0
    rows = list(csv.DictReader(io.StringIO(out.read_text())))
    assert [r["selector"] for r in rows] == ["final_exit", "static_lut"]
    assert float(rows[0]["delta_iepmj"]) == 0.0
    d = float(rows[1]["delta_avg_accuracy_all"])
    assert d == pytest.approx(float(rows[1]["avg_accuracy_all"]) - float(rows[0]["avg_accuracy_all"]))
    assert d > 0


def test_malformed_trace_names_the_line(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("time_s,power_mw\n0,1\n1,oops\n2,1\n")
    cfg = write_cfg(tmp_path, f'[scenario]\ntrace = "{bad.as_posix()}"\nevents = 5\n')
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["exit_code"] == 2 and "bad.csv:3:" in err["message"]


def test_unknown_config_key_rejected(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "[scenario]\ncapacity = 5\n")
    assert main(["simulate", "--config", cfg]) == 2
    err = json.loads(capsys.readouterr().err.strip())
    assert err["error"] == "ConfigError" and "capacity" in err["message"]


def test_wrong_type_rejected(tmp_path, capsys):
    cfg = write_cfg(tmp_path, '[scenario]\nevents = "many"\n')
    assert main(["simulate", "--config", cfg]) == 2


def test_missing_config_file(tmp_path, capsys):
    assert main(["simulate", "--config", str(tmp_path / "nope.toml")]) == 2


def test_search_outputs(tmp_path):
    cfg = write_cfg(tmp_path, (CONFIGS / "toy_search.toml").read_text() + "")
    text = Path(cfg).read_text().replace("events = 300", "events = 60")
    Path(cfg).write_text(text)
    out_a, out_b = tmp_path / "sa", tmp_path / "sb"
    args = ["search", "--config", cfg, "--episodes", "12", "--random-samples", "12"]
    code = main([*args, "--out", str(out_a)])
    assert code in (0, 3)
    main([*args, "--out", str(out_b)])
    assert files(out_a) == files(out_b)
    s = json.loads((out_a / "search.json").read_text())
    assert s["eval_mode"] == "surrogate"
    hist = (out_a / "history.jsonl").read_text().splitlines()
    assert "provenance" in json.loads(hist[0]) and len(hist) >= 13
    if code == 0:
        pol = json.loads((out_a / "best_policy.json").read_text())
        assert len(pol["entries"]) == 6
        assert s["flops_ratio_remaining"] <= 0.7 + 1e-12


def test_console_entry_point():
    r = subprocess.run([sys.executable, "-m", "ehexit.cli", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.strip()


def test_simulate_report_satisfies_simulator_invariants(tmp_path):
    out = tmp_path / "p"
    assert main(["simulate", "--config", str(CONFIGS / "reference_profile.toml"), "--out", str(out)]) == 0
    d = json.loads((out / "report.json").read_text())
    agg = d["report"]["aggregates"]
    assert agg["n_events"] == 500 == agg["n_processed"] + agg["n_missed"]
    assert sum(agg["exit_fractions"]) + agg["missed_fraction"] == pytest.approx(1.0, abs=1e-12)
    assert agg["iepmj"] == pytest.approx(agg["iepmj_identity"], rel=1e-12)
    assert agg["iepmj"] == pytest.approx(agg["n_correct"] / agg["e_total_mj"], rel=1e-12)
    assert agg["e_spent_mj"] <= agg["e_absorbed_mj"] + 1e-9 <= agg["e_harvested_mj"] + 2e-9
    rows = list(csv.DictReader(io.StringIO("\n".join((out / "events.csv").read_text().splitlines()[1:]))))
    costs = [p["energy_cost"] for p in d["profiles"]]
    for r in rows:
        assert -1e-9 <= float(r["level_after"]) <= 10.0 + 1e-9
        if int(r["exit"]) >= 0:
            assert float(r["energy"]) == pytest.approx(costs[int(r["exit"])], rel=1e-12)
            assert float(r["level_before"]) + 1e-9 >= float(r["energy"])
        else:
            assert float(r["accuracy"]) == 0.0


def test_report_over_runtime_policies(tmp_path):
    cfg = write_cfg(tmp_path, SMALL)
    for pol in ("static_lut", "q_learning"):
        assert main(["runtime", "--config", cfg, "--policy", pol, "--out", str(tmp_path / pol)]) == 0
    out = tmp_path / "cmp.csv"
    main(["report", str(tmp_path / "static_lut"), str(tmp_path / "q_learning"), "--out", str(out)])
    rows = list(csv.DictReader(io.StringIO(out.read_text())))
    for k in ("iepmj", "avg_accuracy_all", "n_processed"):
        want = float(rows[1][k]) - float(rows[0][k])
        assert float(rows[1][f"delta_{k}"]) == want

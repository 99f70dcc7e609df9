from __future__ import annotations

import json
import subprocess
import sys

import pytest

from foliasim import cli
from foliasim.cli import RunConfig, config_from_args, run
from foliasim.errors import NumericalBlowup


def call(argv, capsys):
    code = run(argv)
    out, err = capsys.readouterr()
    return code, out, err


def error_of(err: str) -> dict:
    lines = [ln for ln in err.splitlines() if ln.startswith("{")]
    assert len(lines) == 1
    return json.loads(lines[0])


def test_verify_half_slope(capsys):
    code, out, _ = call(["verify", "--scenario", "torus_line", "--a", "0.5", "--seed", "7", "--quiet"], capsys)
    rep = json.loads(out)
    assert code == 0
    assert (rep["reach_verdict"], rep["support_verdict"], rep["constancy_verdict"]) == ("NotDense",) * 3
    assert rep["consistent"] is True and rep["matches_expected"] is True


def test_rank_torus_pair(capsys):
    code, out, _ = call(["rank", "--scenario", "torus_pair", "--samples", "100", "--seed", "1"], capsys)
    rep = json.loads(out)
    assert code == 0 and rep["rank"]["full_rank_everywhere"] is True and rep["matches_expected"] is True


def test_rank_sl2_reports_relations(capsys):
    code, out, _ = call(["rank", "--scenario", "sl2_frame", "--samples", "30", "--seed", "1"], capsys)
    rep = json.loads(out)
    assert code == 0 and rep["rank"]["min_rank"] == 3
    assert rep["bracket_relations"]["max_error"] <= 1e-5


def test_sde_byte_identical(tmp_path):
    argv = ["sde", "--scenario", "torus_line", "--a", "0.61803398875", "--T", "10", "--dt", "0.01",
            "--seed", "5", "--quiet"]
    outs = []
    for k in range(2):
        path = tmp_path / f"{k}.json"
        assert run(argv + ["--out", str(path)]) == 0
        outs.append(path.read_bytes())
    assert outs[0] == outs[1]
    rep = json.loads(outs[0])
    assert len(rep["trajectory"]["points"]) == 1001 and rep["max_constraint_residual"] == 0.0


def test_sde_subprocess_matches_in_process(tmp_path):
    argv = ["sde", "--scenario", "sphere_bm", "--T", "1", "--seed", "9", "--quiet"]
    a = tmp_path / "a.json"
    assert run(argv + ["--out", str(a)]) == 0
    proc = subprocess.run([sys.executable, "-m", "foliasim", *argv], capture_output=True, check=True)
    assert proc.stdout == a.read_bytes()


def test_histogram_exports(tmp_path, capsys):
    csv, pgm = tmp_path / "h.csv", tmp_path / "h.pgm"
    code, out, _ = call(["occupation", "--scenario", "torus_pair", "--T", "20", "--grid", "8", "8", "--seed", "3",
                         "--quiet", "--hist", str(csv), "--heatmap", str(pgm)], capsys)
    assert code == 0
    rows = csv.read_text().splitlines()
    assert rows[0] == "cell_id,count,weight" and len(rows) == 65
    assert sum(int(r.split(",")[1]) for r in rows[1:]) == json.loads(out)["histogram"]["total_samples"]
    assert pgm.read_bytes().startswith(b"P5\n8 8\n255\n") and len(pgm.read_bytes()) == 11 + 64


def test_list_scenarios(capsys):
    code, out, _ = call(["list-scenarios"], capsys)
    assert code == 0 and len(json.loads(out)["scenarios"]) == 6


def test_invariance_and_harmonic(capsys):
    code, out, _ = call(["invariance", "--scenario", "torus_line", "--a", "0.5", "--seed", "1",
                         "--quad-res", "64", "64"], capsys)
    assert code == 0 and json.loads(out)["invariance"]["max_abs_residual"] <= 1e-5
    code, out, _ = call(["harmonic", "--scenario", "sphere_height", "--seed", "1", "--T-ergodic", "20",
                         "--replicas", "2", "--quiet"], capsys)
    rep = json.loads(out)
    assert code == 0
    assert max(abs(v) for v in rep["witness"]["generator_at_markers"].values()) <= 1e-6


@pytest.mark.parametrize("argv, code, err", [
    (["rank", "--scenario", "torus_pair"], 1, "E_CONFIG"),
    (["rank", "--seed", "1"], 1, "E_CONFIG"),
    (["rank", "--scenario", "nope", "--seed", "1"], 1, "E_UNKNOWN_SCENARIO"),
    (["frobnicate"], 1, "E_CONFIG"),
    (["rank", "--scenario", "torus_pair", "--seed", "1", "--bogus"], 1, "E_CONFIG"),
    (["verify", "--scenario", "torus_line", "--a", "0.5", "--rational", "false", "--seed", "1"], 1, "E_BAD_PARAMS"),
    (["sde", "--scenario", "sl2_frame", "--seed", "1"], 1, "E_NONCOMPACT"),
    (["sde", "--scenario", "torus_pair", "--seed", "1", "--dt", "-1"], 1, "E_CONFIG"),
    (["rank", "--scenario", "torus_pair", "--seed", "1", "--h", "0.5"], 1, "E_CONFIG"),
    (["rank", "--scenario", "torus_pair", "--seed", "1", "--config", "/nonexistent.json"], 1, "E_CONFIG"),
    (["rank", "--scenario", "torus_pair", "--seed", "1", "--out", "/nonexistent/dir/x.json"], 1, "E_IO"),
    (["rank", "--scenario", "torus_pair", "--seed", "1", "--hist", "x.csv"], 1, "E_CONFIG"),
])
def test_errors(argv, code, err, capsys):
    got, out, stderr = call(argv, capsys)
    assert got == code
    d = error_of(stderr)
    assert d["error"] == err and d["message"]


def test_numeric_failure_exit_code(monkeypatch, capsys):
    def boom(*a, **k):
        raise NumericalBlowup("a coordinate exceeded 1e+06")

    monkeypatch.setattr(cli, "simulate_sde", boom)
    got, _, err = call(["sde", "--scenario", "sphere_bm", "--seed", "1", "--quiet"], capsys)
    assert got == 2 and error_of(err)["error"] == "E_BLOWUP"


def test_strict_exit_three_on_sphere_height(capsys):
    code, out, err = call(["harmonic", "--scenario", "sphere_height", "--seed", "2", "--T-ergodic", "50",
                           "--replicas", "3", "--quiet", "--strict"], capsys)
    assert json.loads(out)["constancy"]["verdict"] == "Inconclusive"
    assert code == 3 and error_of(err)["error"] == "E_INCONCLUSIVE"


def test_dump_config_round_trip(tmp_path, capsys):
    argv = ["verify", "--scenario", "torus_line", "--a", "0.25", "--seed", "42", "--T", "100", "--grid", "16", "8",
            "--burn-in", "5", "--replicas", "4", "--workers", "2", "--strict", "--quad-res", "32", "32"]
    code, out, _ = call(argv + ["--dump-config"], capsys)
    assert code == 0
    cfg, _ = config_from_args(argv)
    assert RunConfig.from_json(json.loads(out)) == cfg
    path = tmp_path / "cfg.json"
    path.write_text(out)
    again, _ = config_from_args(["verify", "--config", str(path)])
    assert again == cfg
    code, out2, _ = call(["verify", "--config", str(path), "--dump-config"], capsys)
    assert out2 == out


def test_flags_override_config(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"command": "sde", "scenario": "torus_pair", "seed": 1, "budgets": {"T": 5}}))
    cfg, _ = config_from_args(["sde", "--config", str(path), "--seed", "2", "--dt", "0.1"])
    assert cfg.seed == 2 and cfg.budgets == {"T": 5.0, "dt": 0.1}
    with pytest.raises(Exception):
        config_from_args(["rank", "--config", str(path)])


def test_config_rejects_unknown_fields():
    from foliasim.errors import ConfigError

    with pytest.raises(ConfigError):
        RunConfig.from_json({"command": "rank", "colour": "red"})
    with pytest.raises(ConfigError):
        RunConfig.from_json({"command": "rank", "seed": "7"})

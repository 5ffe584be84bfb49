import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from gaussflow import io
from gaussflow.cli import main
from gaussflow.errors import ConfigError

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"

MINIMAL = {
    "anisotropy": {"family": "constant", "parameters": {"c": 1.0, "dim": 2}},
    "grid": {"n": 1, "origin": [-2.0], "spacing": 0.1, "extents": [41]},
    "initial": {"kind": "paraboloid"},
    "flow": {"alpha": 1.0, "t_end": 0.02},
}


def with_changes(base, **changes):
    out = json.loads(json.dumps(base))
    for key, val in changes.items():
        out[key] = val
    return out


def write_yaml(path, data):
    path.write_text(yaml.safe_dump(data))
    return path


def test_minimal_config_defaults():
    cfg = io.config_from_dict(MINIMAL)
    assert cfg.version == 1 and cfg.seed == 0
    assert cfg.flow.cfl_safety == 0.2 and cfg.flow.snapshot_stride == 10
    assert cfg.flow.boundary == "frozen_dirichlet"
    assert cfg.checks.gradient is None and not cfg.shift.enabled
    assert cfg.initial.coeff == 0.5


def test_round_trip(tmp_path):
    cfg = io.parse_config(write_yaml(tmp_path / "c.yaml", MINIMAL))
    text = io.emit_config(cfg)
    assert json.loads(text) == io.normalize_config(MINIMAL)
    again = io.parse_config(_write(tmp_path / "c.json", text))
    assert again == cfg


def _write(path, text):
    path.write_text(text)
    return path


def test_n_below_beta_names_hypothesis():
    bad = with_changes(MINIMAL, checks={"gradient": {"N": 0.5, "beta": 1.0}})
    with pytest.raises(ConfigError, match="gradient-estimate hypothesis"):
        io.config_from_dict(bad)


@pytest.mark.parametrize("patch, needle", [
    ({"bogus": 1}, "bogus"),
    ({"flow": {"alpha": -1.0, "t_end": 1.0}}, "flow.alpha"),
    ({"grid": {"n": 2, "origin": [0.0], "spacing": 0.1, "extents": [5]}}, "length n"),
    ({"anisotropy": {"family": "constant", "parameters": {"c": 1.0, "dim": 3}}}, "dimension"),
    ({"flow": {"alpha": 1.0, "t_end": 1.0, "boundary": "exact_dirichlet"}}, "oracle initial kind"),
])
def test_validation_errors(patch, needle):
    with pytest.raises(ConfigError, match=needle):
        io.config_from_dict(with_changes(MINIMAL, **patch))


def test_parse_error_reports_line(tmp_path):
    p = _write(tmp_path / "bad.yaml", "flow: {alpha: 1\n  t_end: [\n")
    with pytest.raises(ConfigError, match="line"):
        io.parse_config(p)


def test_run_and_reload_bit_identical(tmp_path):
    cfg = io.parse_config(CONFIGS / "grim_reaper.yaml")
    code, report = io.run_experiment(cfg, tmp_path / "gr")
    assert code == 0 and report["passed"]
    assert all(r["margin"] >= 0 for r in report["checks"])
    assert report["run"]["max_error_vs_reference"] < 2e-4
    for name in ("config.json", "trace.json", "state.npz", "diagnostics.csv", "report.json"):
        assert (tmp_path / "gr" / name).exists()
    code2, again = io.verify_trace(tmp_path / "gr")
    assert code2 == 0
    assert [r["margin"] for r in again["checks"]] == [r["margin"] for r in report["checks"]]
    header = (tmp_path / "gr" / "diagnostics.csv").read_text().splitlines()[0]
    assert header == "t,dt,max_speed,min_lambda_min,retries"


def test_load_trace_exact(tmp_path):
    cfg = io.config_from_dict(MINIMAL)
    io.run_experiment(cfg, tmp_path / "m")
    tr = io.load_trace(tmp_path / "m")
    desc = io.build_descriptor(cfg)
    ref = io.build_initial_grid(cfg)
    assert np.array_equal(tr.snapshots[0].u, ref.u)
    assert tr.desc.to_dict() == desc.to_dict()


def test_nonconvex_descriptor_fails_at_certification(tmp_path):
    bad = with_changes(MINIMAL, anisotropy={
        "family": "perturbed",
        "parameters": {"base": {"family": "constant", "parameters": {"c": 1.0, "dim": 2}},
                       "terms": [{"coefficients": [0.0, 1.0], "amplitude": 2.0}]}})
    code, report = io.run_experiment(io.config_from_dict(bad), tmp_path / "x")
    assert code == io.EXIT_CONFIG and report["stage"] == "certify"
    assert (tmp_path / "x" / "report.json").exists()


def test_numerical_failure_exit(tmp_path):
    data = with_changes(MINIMAL, flow={"alpha": 1.0, "t_end": 1.0, "fixed_dt": 5.0, "max_retries": 0})
    code, report = io.run_experiment(io.config_from_dict(data), tmp_path / "f")
    assert code == io.EXIT_NUMERICAL and report["stage"] == "run"
    assert (tmp_path / "f" / "trace.json").exists()


def test_shift_stage(tmp_path):
    data = with_changes(MINIMAL, anisotropy={"family": "ellipsoid", "parameters": {"axes": [1.0, 2.0]}},
                        shift={"enabled": True, "samples": 2000},
                        checks={"gradient": {"N": 1.0, "beta": 1.0}})
    code, report = io.run_experiment(io.config_from_dict(data), tmp_path / "s")
    assert code == 0
    assert report["shift"]["margin"] <= 1e-8
    manifest = json.loads((tmp_path / "s" / "trace.json").read_text())
    assert manifest["descriptor"]["family"] == "perturbed"


def test_random_shift_direction_uses_seed():
    data = with_changes(MINIMAL, shift={"enabled": True, "e_dir": "random"}, seed=3)
    a = io._e_dir(io.config_from_dict(data))
    b = io._e_dir(io.config_from_dict(data))
    assert np.array_equal(a, b) and abs(np.linalg.norm(a) - 1) < 1e-15


def test_failing_check_exit(tmp_path):
    # a vanishing v-evolution tolerance cannot be met
    data = with_changes(MINIMAL, flow={"alpha": 1.0, "t_end": 0.005, "snapshot_stride": 1},
                        checks={"v_evolution": {"tolerance": 1e-30}})
    code, report = io.run_experiment(io.config_from_dict(data), None)
    assert code == io.EXIT_CHECK_FAILED and not report["passed"]


def test_empty_suite():
    code, report = io.verify_suite({"version": 1, "experiments": []})
    assert code == 0 and report["total"] == 0


def test_suite_isolates_one_failure(tmp_path):
    good = with_changes(MINIMAL, id="a-good")
    bad = with_changes(MINIMAL, id="b-bad", checks={"v_evolution": {"tolerance": 1e-30}},
                       flow={"alpha": 1.0, "t_end": 0.005, "snapshot_stride": 1})
    broken = with_changes(MINIMAL, id="c-broken", flow={"alpha": -1.0, "t_end": 1.0})
    code, report = io.verify_suite({"experiments": [bad, good, broken]}, tmp_path)
    ids = [s["id"] for s in report["summary"]]
    assert ids == ["a-good", "b-bad", "c-broken"]
    assert [s["exit_code"] for s in report["summary"]] == [0, 1, 2]
    assert code != 0 and report["failures"] == 2
    assert "2 failed" in io.format_summary(report)


def test_suite_product_expansion():
    configs = io.expand_matrix(yaml.safe_load((CONFIGS / "standard_matrix.yaml").read_text()))
    assert len(configs) == 27
    assert len({c["id"] for c in configs}) == 27
    for c in configs:
        io.config_from_dict(c)


def test_suite_deterministic_across_jobs(tmp_path):
    matrix = {"experiments": [with_changes(MINIMAL, id=f"e{k}", flow={"alpha": a, "t_end": 0.01})
                              for k, a in enumerate((0.5, 1.0, 2.0))]}
    io.verify_suite(matrix, tmp_path / "one", jobs=1)
    io.verify_suite(matrix, tmp_path / "two", jobs=2)
    for f in sorted((tmp_path / "one").rglob("*.csv")):
        assert f.read_bytes() == (tmp_path / "two" / f.relative_to(tmp_path / "one")).read_bytes()


def test_oracle_export(tmp_path):
    cfg = io.parse_config(CONFIGS / "grim_reaper.yaml")
    paths = io.export_oracle(cfg, tmp_path, times=[0.0, 0.5])
    rows = np.loadtxt(paths[1], delimiter=",", skiprows=1)
    np.testing.assert_allclose(rows[:, 1], 0.5 - np.log(np.cos(rows[:, 0])), atol=1e-15)


def test_oracle_export_needs_reference(tmp_path):
    with pytest.raises(ConfigError):
        io.export_oracle(io.config_from_dict(MINIMAL), tmp_path)


# --- CLI

def test_cli_run_verify(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["run", "--config", str(CONFIGS / "grim_reaper.yaml"), "--out", str(out)]) == 0
    assert main(["verify", "--trace", str(out)]) == 0
    assert '"passed": true' in capsys.readouterr().out


def test_cli_wulff(tmp_path, capsys):
    p = write_yaml(tmp_path / "w.yaml", with_changes(
        MINIMAL, anisotropy={"family": "ellipsoid", "parameters": {"axes": [1.0, 2.0]}}))
    assert main(["wulff", "--config", str(p), "--out", str(tmp_path)]) == 0
    data = json.loads((tmp_path / "wulff.json").read_text())
    assert data["lambda_lo"] == pytest.approx(0.5) and data["lambda_hi"] == pytest.approx(4.0)
    assert data["shift"]["holds"]


def test_cli_wulff_nonconvex(tmp_path, capsys):
    p = write_yaml(tmp_path / "w.yaml", with_changes(MINIMAL, anisotropy={
        "family": "perturbed",
        "parameters": {"base": {"family": "constant", "parameters": {"c": 1.0, "dim": 2}},
                       "terms": [{"coefficients": [0.0, 1.0], "amplitude": 2.0}]}}))
    assert main(["wulff", "--config", str(p)]) == 2


def test_cli_config_error(tmp_path, capsys):
    p = write_yaml(tmp_path / "bad.yaml", with_changes(MINIMAL, bogus=True))
    assert main(["run", "--config", str(p)]) == 2
    assert "bogus" in capsys.readouterr().err
    assert main(["run", "--config", str(tmp_path / "missing.yaml")]) == 2


def test_cli_oracle_and_suite(tmp_path, capsys):
    assert main(["oracle", "--config", str(CONFIGS / "grim_reaper.yaml"), "--out", str(tmp_path / "o")]) == 0
    assert len(list((tmp_path / "o").glob("*.csv"))) == 2
    m = write_yaml(tmp_path / "m.yaml", {"version": 1, "experiments": [with_changes(MINIMAL, id="only")]})
    assert main(["suite", "--config", str(m), "--out", str(tmp_path / "s"), "--seed", "7"]) == 0
    rep = json.loads((tmp_path / "s" / "suite_report.json").read_text())
    assert rep["experiments"]["only"]["seed"] == 7

"""End-to-end tests of the subcommands, the manifest audit and the exit codes."""

import logging

import pytest
import yaml

from cli.commands import audit_manifest, problem_from_config, resolve_coefficient, run
from main import main
from services.errors import AuditError, ConfigurationError
from utils.config import config_from_dict
from utils.export import read_csv, read_manifest


def _config(**sections):
    base = {
        "grid": {"steps": 50},
        "family": {"samples": 100, "depth": 1, "seed": 42},
        "tolerances": {"inner_levels": 4},
    }
    for name, values in sections.items():
        if isinstance(values, dict):
            base.setdefault(name, {}).update(values)
        else:
            base[name] = values
    return config_from_dict(base)


def _report(path):
    lines = path.read_text().splitlines()
    return dict(line.split(": ", 1) for line in lines)


@pytest.fixture(autouse=True)
def _drop_gdesk_handlers():
    yield
    root = logging.getLogger()
    for handler in list(root.handlers):
        if getattr(handler, "_gdesk", False):
            root.removeHandler(handler)
            handler.close()
    root.setLevel(logging.WARNING)


def test_gheat_root_value(tmp_path):
    run("gheat", _config(), tmp_path)
    kind, frame = read_csv(tmp_path / "gheat.csv")
    assert kind == "gheat"
    root = frame[(frame["t"] == 0.0) & (frame["x"] == 0.0)]
    assert len(root) == 1
    assert root["u"].iloc[0] == pytest.approx(1.0, rel=0.02)
    assert root["u_lower"].iloc[0] == pytest.approx(0.25, rel=0.02)
    report = _report(tmp_path / "gheat_report.txt")
    assert float(report["root_value"]) == pytest.approx(1.0, rel=0.02)


def test_manifest_lists_artifacts(tmp_path):
    manifest_path = run("gheat", _config(), tmp_path)
    manifest = read_manifest(manifest_path)
    assert manifest["subcommand"] == "gheat"
    assert manifest["seed"] == 42
    assert sorted(manifest["artifacts"]) == ["experiment.yaml", "gheat.csv", "gheat_report.txt"]
    assert yaml.safe_load((tmp_path / "experiment.yaml").read_text()) == manifest["config"]


def test_paths_run_audits_cleanly(tmp_path):
    manifest_path = run("paths", _config(), tmp_path)
    _, frame = read_csv(tmp_path / "paths.csv")
    assert frame["sample"].max() == 99
    report = _report(tmp_path / "paths_report.txt")
    assert "holds" in report["qv_bound"]
    assert float(report["bdg_lower_ratio"]) > 0.0
    assert float(report["terminal_second_moment"]) > 0.0
    assert audit_manifest(manifest_path) == ["experiment.yaml", "paths.csv", "paths_report.txt"]
    assert audit_manifest(tmp_path) == ["experiment.yaml", "paths.csv", "paths_report.txt"]


def test_tampered_artifact_fails_audit(tmp_path):
    manifest_path = run("paths", _config(), tmp_path)
    csv = tmp_path / "paths.csv"
    csv.write_text(csv.read_text() + "0,0,0,0,0\n")
    with pytest.raises(AuditError, match="paths.csv"):
        audit_manifest(manifest_path)


def test_changed_seed_fails_audit(tmp_path):
    manifest_path = run("paths", _config(), tmp_path)
    manifest = yaml.safe_load(manifest_path.read_text())
    manifest["config"]["family"]["seed"] = 43
    manifest_path.write_text(yaml.safe_dump(manifest))
    with pytest.raises(AuditError, match="Repeated run"):
        audit_manifest(manifest_path)


def test_infconv_run(tmp_path):
    run("infconv", _config(), tmp_path)
    _, frame = read_csv(tmp_path / "infconv.csv")
    assert list(frame.columns) == ["x", "f", "f_n3", "f_n6", "f_n12", "f_n24"]
    assert _report(tmp_path / "infconv_report.txt")["passed"] == "True"


def test_rbsde_lattice_run(tmp_path):
    run("rbsde", _config(problem={"name": "decoupled"}), tmp_path)
    report = _report(tmp_path / "rbsde_report.txt")
    assert report["backend"] == "lattice"
    assert float(report["martingale_defect"]) == pytest.approx(0.0, abs=1e-12)


def test_rfbsde_decoupled_reports_first_iteration(tmp_path):
    run("rfbsde", _config(problem={"name": "decoupled"}), tmp_path)
    report = _report(tmp_path / "rfbsde_report.txt")
    assert report["converged"] == "True"
    assert report["converged_iteration"] == "1"
    assert report["decoupled"] == "True"
    _, iterations = read_csv(tmp_path / "rfbsde_iterations.csv")
    assert len(iterations) == 2


def test_rfbsde_rejects_scenario_backend(tmp_path):
    with pytest.raises(ConfigurationError, match="lattice"):
        run("rfbsde", _config(backend="scenario"), tmp_path)


def test_forward_scenario_rejects_y_dependence(tmp_path):
    with pytest.raises(ConfigurationError, match="free of y"):
        run("forward", _config(backend="scenario"), tmp_path)


def test_forward_lattice_run(tmp_path):
    run("forward", _config(), tmp_path)
    report = _report(tmp_path / "forward_report.txt")
    assert float(report["envelope_margin"]) >= 0.0
    assert int(report["ladder_levels_used"]) >= 1


def test_coefficient_entries():
    assert resolve_coefficient("phi", "square").label == "square"
    assert resolve_coefficient("sigma", 0.8)(0.0, [1.0, 2.0]).tolist() == [0.8, 0.8]
    coeff = resolve_coefficient("b", {"expr": "0.5*tanh(y)", "growth": 0.5, "lipschitz": 0.5,
                                      "monotone": {"y": "increasing"}})
    assert coeff.variables == ("y",)
    with pytest.raises(ConfigurationError):
        resolve_coefficient("sigma", "tanh_y")


def test_overrides_raise_growth_and_envelope():
    config = _config(problem={"name": "decoupled"}, coefficients={"f": {"expr": "2*tanh(z)", "growth": 2.0}})
    problem = problem_from_config(config)
    assert problem.growth == 2.0
    assert problem.envelope == 2.0
    assert problem.backward.growth == 2.0


def test_main_returns_configuration_code(tmp_path, monkeypatch):
    monkeypatch.setenv("XDG_STATE_HOME", str(tmp_path / "state"))
    bad = tmp_path / "bad.yaml"
    bad.write_text("grid: [steps: 10\n")
    assert main(["gheat", "--config", str(bad)]) == 2


def test_main_runs_and_audits(tmp_path, monkeypatch):
    monkeypatch.setenv("XDG_STATE_HOME", str(tmp_path / "state"))
    config_path = tmp_path / "experiment.yaml"
    config_path.write_text(yaml.safe_dump({"grid": {"steps": 40}, "family": {"samples": 50}}))
    out = tmp_path / "run"
    assert main(["paths", "--config", str(config_path), "--out", str(out), "--seed", "5"]) == 0
    assert read_manifest(out)["seed"] == 5
    assert main(["audit", str(out)]) == 0
    assert main(["audit"]) == 2


def test_rbsde_default_problem_reports_contact(tmp_path):
    run("rbsde", _config(), tmp_path)
    report = _report(tmp_path / "rbsde_report.txt")
    assert report["problem"] == "coupled_tanh"
    assert 0.0 <= float(report["floor_contact_fraction"]) <= 1.0


def test_rfbsde_square_root_driver(tmp_path):
    run("rfbsde", _config(problem={"name": "sqrt_coupled"}, grid={"steps": 20}), tmp_path)
    report = _report(tmp_path / "rfbsde_report.txt")
    assert report["decoupled"] == "False"
    assert float(report["y0"]) >= -1.0

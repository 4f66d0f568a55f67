"""Tests for the YAML experiment config and logging setup."""

import logging

import pytest

from services.errors import ConfigurationError
from utils.config import (
    ExperimentConfig,
    GridConfig,
    apply_overrides,
    config_from_dict,
    get_config_path,
    load_config,
    save_config,
)
from utils.logging_config import setup_logging


def test_missing_file_gives_defaults(tmp_path):
    config = load_config(tmp_path / "absent.yaml")
    assert config == ExperimentConfig()
    assert config.grid.steps == 200
    assert config.family.seed == 12345
    assert config.backend == "lattice"


def test_empty_file_gives_defaults(tmp_path):
    path = tmp_path / "empty.yaml"
    path.write_text("")
    assert load_config(path) == ExperimentConfig()


def test_bad_yaml_raises(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("grid: [steps: 10\n")
    with pytest.raises(ConfigurationError, match="Error parsing"):
        load_config(path)


def test_sections_are_read(tmp_path):
    path = tmp_path / "experiment.yaml"
    path.write_text(
        "band:\n  sigma_lo: 0.3\n  sigma_hi: 0.8\n"
        "grid:\n  steps: 80\n"
        "problem:\n  name: decoupled\n"
        "coefficients:\n  phi: x*x\n"
        "backend: scenario\n"
    )
    config = load_config(path)
    assert config.band.to_band().sigma_lo == 0.3
    assert config.grid.steps == 80
    assert config.problem.name == "decoupled"
    assert config.coefficients == {"phi": "x*x"}
    assert config.backend == "scenario"


def test_courant_is_clamped(caplog):
    with caplog.at_level(logging.WARNING):
        grid = GridConfig(courant=0.9)
    assert grid.courant == 0.5
    assert "courant" in caplog.text


def test_narrow_domain_is_widened():
    assert GridConfig(width_sigmas=1.0).width_sigmas == 3.0


def test_family_depth_is_clamped():
    config = config_from_dict({"family": {"depth": 40}})
    assert config.family.depth == 10


def test_invalid_values_raise():
    with pytest.raises(ConfigurationError):
        config_from_dict({"backend": "gpu"})
    with pytest.raises(ConfigurationError):
        config_from_dict({"coefficients": {"kappa": "x"}})
    with pytest.raises(ConfigurationError):
        config_from_dict({"grid": "fine"})
    with pytest.raises(ConfigurationError):
        config_from_dict({"tolerances": {"tol": 0.0}})


def test_unknown_keys_are_ignored(caplog):
    with caplog.at_level(logging.WARNING):
        config = config_from_dict({"grid": {"steps": 10, "colour": "blue"}, "extras": {}})
    assert config.grid.steps == 10
    assert "grid.colour" in caplog.text
    assert "extras" in caplog.text


def test_validate_rejects_inverted_band():
    config = config_from_dict({"band": {"sigma_lo": 1.0, "sigma_hi": 0.5}})
    with pytest.raises(ConfigurationError, match="band"):
        config.validate()


def test_save_and_load(tmp_path):
    config = config_from_dict({"grid": {"steps": 60}, "coefficients": {"f": "tanh(x)"}})
    path = tmp_path / "saved" / "experiment.yaml"
    save_config(config, path)
    assert load_config(path) == config


def test_overrides_take_precedence():
    config = apply_overrides(ExperimentConfig(), seed=7, out="runs/a", tol=1e-3, steps=40,
                             family_depth=2, backend="scenario")
    assert config.family.seed == 7
    assert config.output.dir == "runs/a"
    assert config.tolerances.tol == 1e-3
    assert config.grid.steps == 40
    assert config.family.depth == 2
    assert config.backend == "scenario"


def test_none_overrides_leave_values():
    assert apply_overrides(ExperimentConfig()) == ExperimentConfig()


def test_config_path_follows_xdg(monkeypatch, tmp_path):
    monkeypatch.setenv("XDG_CONFIG_HOME", str(tmp_path))
    assert get_config_path() == tmp_path / "gdesk" / "experiment.yaml"


def test_setup_logging_replaces_its_handlers(tmp_path):
    log_file = setup_logging(level=logging.DEBUG, console=False, log_dir=tmp_path)
    setup_logging(level=logging.DEBUG, console=False, log_dir=tmp_path)
    tagged = [h for h in logging.getLogger().handlers if getattr(h, "_gdesk", False)]
    assert len(tagged) == 1
    assert log_file == tmp_path / "gdesk.log"
    assert log_file.exists()
    for handler in tagged:
        logging.getLogger().removeHandler(handler)
        handler.close()
    logging.getLogger().setLevel(logging.WARNING)

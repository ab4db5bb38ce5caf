import pytest
from pydantic import ValidationError

from conelab.config import (
    InitialData,
    LabConfig,
    Settings,
    dump_config,
    load_config,
    parse_config_text,
)
from conelab.errors import ConfigError
from conelab.flow import FlowVariant
from conelab.geometry import DivisorKind

SMALL = """
# small conical run
geometry.gamma = 0.25
geometry.horizon_T = 0.5   # below tmax = 4
mesh.u_min = -10
mesh.u_max = 8
mesh.n = 65
flow.output_times = 0.1, 0.25
flow.initial_data = bump
sweep.gammas = 0.25, 0.125
"""


def test_defaults():
    config = load_config(None)
    assert config.geometry.divisor is DivisorKind.ONE_POINT
    assert config.geometry.gamma == 0.5
    assert config.geometry.twist_c == 1.0
    assert config.mesh.u_min == -40.0 and config.mesh.u_max == 12.0 and config.mesh.n == 513
    assert config.mesh.grading == 1.02
    assert config.sweep.u_mins == [-20.0, -40.0, -60.0]
    assert config.flow.variant is FlowVariant.CONICAL
    assert config.tmax() == pytest.approx(2.0)
    assert config.estimates.gamma_ladder is False
    assert parse_config_text("estimates.gamma_ladder = true\n").estimates.gamma_ladder is True


def test_parse_small_config():
    config = parse_config_text(SMALL)
    assert config.geometry.gamma == 0.25
    assert config.flow.output_times == [0.1, 0.25]
    assert config.flow.initial_data is InitialData.BUMP
    assert config.sweep.gammas == [0.25, 0.125]
    flow = config.flow_config()
    assert flow.mesh.n == 65
    assert flow.output_times == (0.1, 0.25)


def test_unknown_key_names_key_and_line():
    with pytest.raises(ConfigError) as exc:
        parse_config_text("mesh.n = 65\ngeometry.bogus = 1\n")
    assert exc.value.key == "geometry.bogus"
    assert exc.value.line == 2
    assert "unknown key" in exc.value.message


@pytest.mark.parametrize("text", ["geometry.gamma", "gamma = 0.5", "foo.bar = 1", " = 3"])
def test_malformed_lines(text):
    with pytest.raises(ConfigError) as exc:
        parse_config_text(text)
    assert exc.value.line == 1


def test_bad_value_names_key():
    with pytest.raises(ConfigError) as exc:
        parse_config_text("\ngeometry.gamma = 2\n")
    assert exc.value.key == "geometry.gamma"
    assert exc.value.line == 2


def test_duplicate_key():
    with pytest.raises(ConfigError) as exc:
        parse_config_text("mesh.n = 65\nmesh.n = 129\n")
    assert exc.value.line == 2


def test_conical_needs_positive_gamma():
    with pytest.raises(ConfigError) as exc:
        parse_config_text("geometry.gamma = 0\nsweep.gammas = 0.5\n")
    assert exc.value.key == "geometry.gamma"
    assert exc.value.invariant == "gamma > 0"
    assert "Conical requires gamma > 0" in exc.value.message


def test_cusp_accepts_zero_gamma():
    config = parse_config_text("geometry.gamma = 0\nflow.variant = cusp\nsweep.gammas = 0.5\n")
    assert config.gamma_eff() == 0.0


def test_horizon_beyond_tmax():
    with pytest.raises(ConfigError) as exc:
        parse_config_text("geometry.horizon_T = 2.5\n")
    assert exc.value.key == "geometry.horizon_T"
    assert exc.value.line == 1
    assert "tmax" in exc.value.invariant


def test_horizon_checked_at_sweep_gammas():
    with pytest.raises(ConfigError) as exc:
        parse_config_text("geometry.twist_c = 0.5\ngeometry.gamma = 0.25\nsweep.gammas = 0.25, 1.0\n")
    assert exc.value.key == "sweep.gammas"


def test_rescale_lambda_below_cap():
    with pytest.raises(ConfigError) as exc:
        parse_config_text("geometry.rescale_lambda = 0.05\n")
    assert exc.value.key == "geometry.rescale_lambda"


def test_mesh_errors_become_config_errors():
    with pytest.raises(ConfigError) as exc:
        parse_config_text("mesh.u_min = 5\nmesh.u_max = 1\n")
    assert exc.value.key == "mesh.u_min"


def test_dt_schedule_parsing():
    config = parse_config_text("flow.dt_schedule = 0.5:0.01, 1.0:0.05\n")
    assert config.flow.dt_schedule == [(0.5, 0.01), (1.0, 0.05)]
    assert config.flow_config().scheduled_dt(0.7) == 0.05
    with pytest.raises(ConfigError):
        parse_config_text("flow.dt_schedule = 0.5\n")
    with pytest.raises(ConfigError) as exc:
        parse_config_text("flow.dt_schedule = 0.5:0.01\n")
    assert exc.value.key == "flow.dt_schedule"


def test_dump_parses_back():
    config = parse_config_text(SMALL + "flow.dt_schedule = 0.1:0.01, 0.5:0.02\n")
    text = dump_config(config)
    assert text.startswith("# tmax = 4")
    assert "mesh.grading = 1" in text
    assert parse_config_text(text) == config


def test_dump_of_defaults_parses_back():
    config = LabConfig()
    assert parse_config_text(dump_config(config)) == config


def test_load_config_reads_a_file(tmp_path):
    path = tmp_path / "lab.conf"
    path.write_text(SMALL)
    assert load_config(path) == parse_config_text(SMALL)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.conf")


def test_settings_from_environment(monkeypatch):
    monkeypatch.setenv("CONELAB_LOG_LEVEL", "debug")
    monkeypatch.setenv("CONELAB_JOBS", "3")
    settings = Settings()
    assert settings.log_level == "DEBUG"
    assert settings.jobs == 3
    monkeypatch.setenv("CONELAB_LOG_FORMAT", "xml")
    with pytest.raises(ValidationError):
        Settings()

import numpy as np
import pytest

from uav_scc.config import parse_config, parse_config_text
from uav_scc.errors import ConfigError
from uav_scc.scheduler import Scheme
from uav_scc.simulator import DEFAULT_BLOCKING, DEFAULT_HPS


def test_empty_config_gives_defaults():
    c = parse_config_text("")
    assert c.scheduler.lam == 0.8 and c.scheduler.p_req == 0.95
    assert c.sensing.sigma2_d == 1.0 and c.sigma2_r == 1.0 and c.mse_req == 100.0
    assert c.dt == 1.0 and c.rho == 0.01 and c.sigma2_ax == 0.25
    assert np.allclose(c.sensing.Rv, 0.25 * np.eye(2)) and np.allclose(c.sensing.Ra, 0.01 * np.eye(2))
    assert c.link.p_t_dbm == 30.0 and c.link.n0_dbm == -107.0 and c.link.data_bits == 100
    assert c.h_v == 50.0 and c.n_serving == 3
    assert np.array_equal(c.hps, DEFAULT_HPS)


def test_full_config_round_trip(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("""
scenario:
  hps: [[0, 500], [-433, -250], [433, -250]]
  n_ues: 4
dynamics:
  sigma2_ax: 0.5
control:
  lqr_q: [2, 2, 1, 1, 0.1, 0.1]
sensing:
  rv: [[0.3, 0.0], [0.0, 0.2]]
  mode: ml
positioning:
  mse_req: [50, 60, 70, 80]
channel:
  path_gain_db: -90
scheduler:
  scheme: periodic
  lambda: 0.7
  period: 5
run:
  slots: 200
  seed: 42
  replicas: 3
  blocking: [[0, 10, 12]]
""")
    c = parse_config(path)
    assert c.hps.shape == (3, 2) and c.n_ues == 4
    assert c.sigma2_ax == 0.5 and c.lqr_q[0, 0] == 2.0
    assert c.sensing.Rv[0, 0] == 0.3 and c.sensing_mode == "ml"
    assert np.array_equal(c.mse_req, [50, 60, 70, 80])
    assert c.scheduler.scheme is Scheme.PERIODIC and c.scheduler.lam == 0.7 and c.scheduler.period == 5
    assert (c.slots, c.seed, c.replicas) == (200, 42, 3)
    assert c.blocking_intervals == ((0, 10, 12),)
    assert 10 * np.log10(c.link.mean_path_gain) == pytest.approx(-90.0)


def test_default_blocking_keyword():
    assert parse_config_text("run:\n  blocking: default\n").blocking_intervals == DEFAULT_BLOCKING


@pytest.mark.parametrize("text, line, fragment", [
    ("scheduler:\n  lambda: 1.5\n", 2, "lambda"),
    ("run:\n  slots: 3\nscheduler:\n  scheme: periodic\n  period: 0\n", 5, "period"),
    ("scheduler:\n  scheme: sometimes\n", 2, "scheme"),
    ("dynamics:\n  dt: fast\n", 2, "expected a number"),
    ("dynamics:\n  tau: 1\n", 2, "unknown key"),
    ("extras:\n  a: 1\n", 1, "unknown section"),
    ("sensing:\n  rv: [1, -1]\n", 1, "sensing"),
    ("scheduler: {lambda: [1,\n", 2, "parse error"),
])
def test_errors_point_at_line(text, line, fragment):
    with pytest.raises(ConfigError) as exc:
        parse_config_text(text, "cfg.yaml")
    msg = str(exc.value)
    assert msg.startswith(f"cfg.yaml:{line}:")
    assert fragment in msg


def test_cross_field_invariant_reported():
    with pytest.raises(ConfigError, match="n_serving"):
        parse_config_text("scenario:\n  n_serving: 9\n")


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        parse_config(tmp_path / "nope.yaml")


def test_top_level_must_be_mapping():
    with pytest.raises(ConfigError):
        parse_config_text("- 1\n- 2\n")

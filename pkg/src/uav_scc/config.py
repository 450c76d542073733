"""YAML scenario configuration with line-accurate error messages.

Every key is optional; omitted keys take the default scenario values. Layout::

    scenario:   hps, beacons, n_beacons, beacon_radius, ues, n_ues,
                ue_area_side, h_v, n_serving
    dynamics:   dt, rho, sigma2_ax, sigma2_ay
    control:    lqr_q, lqr_r            (diagonals or full matrices)
    sensing:    sigma2_d, rv, ra, mode  (rv/ra: diagonal pair or 2x2)
    positioning: sigma2_r, mse_req      (mse_req: scalar or one per UE)
    channel:    p_t_dbm, n0_dbm, path_gain_db, data_bits
    scheduler:  scheme, lambda, p_req, period, offsets
    run:        slots, seed, replicas, blocking, bootstrap
"""

from __future__ import annotations

from pathlib import Path
from typing import Any, Callable

import numpy as np
import yaml

from .channel import LinkModel, db_to_linear
from .errors import ConfigError, InvalidParameterError, NumericError
from .scheduler import SchedulerConfig, Scheme
from .sensing import SensingModel
from .simulator import DEFAULT_BLOCKING, ScenarioConfig

_BAD = (InvalidParameterError, NumericError, ValueError)


def _num(v):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ValueError("expected a number")
    return float(v)


def _int(v):
    if isinstance(v, bool) or not isinstance(v, int):
        raise ValueError("expected an integer")
    return v


def _bool(v):
    if not isinstance(v, bool):
        raise ValueError("expected true or false")
    return v


def _points(v):
    a = np.asarray(v, float)
    if a.ndim != 2 or a.shape[1] != 2:
        raise ValueError("expected a list of [x, y] pairs")
    return a


def _matrix(n):
    def conv(v):
        a = np.asarray(v, float)
        if a.shape == (n,):
            return np.diag(a)
        if a.shape != (n, n):
            raise ValueError(f"expected {n} diagonal entries or an {n}x{n} matrix")
        return a
    return conv


def _mse(v):
    a = np.asarray(v, float)
    if a.ndim > 1:
        raise ValueError("expected a number or a list of numbers")
    return float(a) if a.ndim == 0 else a


def _blocking(v):
    if v == "default":
        return DEFAULT_BLOCKING
    out = []
    for item in v:
        if len(item) != 3:
            raise ValueError("each interval is [uav, first_slot, last_slot]")
        out.append(tuple(_int(x) for x in item))
    return tuple(out)


def _choice(*options):
    def conv(v):
        if v not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return v
    return conv


def _check(pred: Callable[[Any], bool], msg: str):
    def check(v):
        if not pred(v):
            raise ValueError(msg)
    return check


_pos = _check(lambda v: v > 0, "must be > 0")
_nonneg = _check(lambda v: v >= 0, "must be >= 0")

# section -> key -> (converter, optional validator)
SCHEMA: dict[str, dict[str, tuple]] = {
    "scenario": {
        "hps": (_points, None), "beacons": (_points, None), "ues": (_points, None),
        "n_beacons": (_int, _check(lambda v: v >= 3, "must be >= 3")),
        "beacon_radius": (_num, _pos), "n_ues": (_int, _nonneg), "ue_area_side": (_num, _pos),
        "h_v": (_num, _nonneg), "n_serving": (_int, _check(lambda v: v >= 3, "must be >= 3")),
    },
    "dynamics": {
        "dt": (_num, _pos), "rho": (_num, _pos), "sigma2_ax": (_num, _nonneg), "sigma2_ay": (_num, _nonneg),
    },
    "control": {"lqr_q": (_matrix(6), None), "lqr_r": (_matrix(2), None)},
    "sensing": {
        "sigma2_d": (_num, _nonneg), "rv": (_matrix(2), None), "ra": (_matrix(2), None),
        "mode": (_choice("direct", "ml"), None),
    },
    "positioning": {
        "sigma2_r": (_num, _nonneg),
        "mse_req": (_mse, _check(lambda v: np.all(np.asarray(v) > 0), "must be > 0")),
    },
    "channel": {
        "p_t_dbm": (_num, None), "n0_dbm": (_num, None), "path_gain_db": (_num, None),
        "data_bits": (_int, _check(lambda v: v >= 1, "must be >= 1")),
    },
    "scheduler": {
        "scheme": (_choice(*(s.value for s in Scheme)), None),
        "lambda": (_num, _check(lambda v: 0 < v <= 1, "must lie in (0, 1]")),
        "p_req": (_num, _check(lambda v: 0.5 <= v < 1, "must lie in [0.5, 1)")),
        "period": (_int, _check(lambda v: v >= 1, "must be >= 1")),
        "offsets": (lambda v: tuple(_int(x) for x in v), None),
    },
    "run": {
        "slots": (_int, _nonneg), "seed": (_int, _nonneg),
        "replicas": (_int, _check(lambda v: v >= 1, "must be >= 1")),
        "blocking": (_blocking, None), "bootstrap": (_bool, None),
    },
}


def _load(text: str, source: str):
    loader = yaml.SafeLoader(text)
    try:
        node = loader.get_single_node()
        if node is None:
            return {}, {}
        data = loader.construct_document(node)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{source}:{mark.line + 1}" if mark else source
        raise ConfigError(f"{where}: YAML parse error: {getattr(exc, 'problem', exc)}") from exc
    finally:
        loader.dispose()
    if not isinstance(data, dict):
        raise ConfigError(f"{source}:{node.start_mark.line + 1}: top level must be a mapping")
    lines: dict[tuple[str, ...], int] = {}
    for k, v in node.value:
        lines[(k.value,)] = k.start_mark.line + 1
        if isinstance(v, yaml.MappingNode):
            for k2, _ in v.value:
                lines[(k.value, k2.value)] = k2.start_mark.line + 1
    return data, lines


def parse_config_text(text: str, source: str = "<config>") -> ScenarioConfig:
    """Validate a YAML document and build a :class:`ScenarioConfig`."""
    data, lines = _load(text, source)

    def fail(path, msg):
        line = lines.get(tuple(path))
        where = f"{source}:{line}" if line else source
        raise ConfigError(f"{where}: {'.'.join(path)}: {msg}")

    vals: dict[str, dict[str, Any]] = {sec: {} for sec in SCHEMA}
    for sec, body in data.items():
        if sec not in SCHEMA:
            fail([str(sec)], f"unknown section (expected one of {', '.join(SCHEMA)})")
        if body is None:
            continue
        if not isinstance(body, dict):
            fail([sec], "section must be a mapping")
        for key, raw in body.items():
            if key not in SCHEMA[sec]:
                fail([sec, str(key)], "unknown key")
            if raw is None:
                continue
            conv, check = SCHEMA[sec][key]
            try:
                v = conv(raw)
                if check is not None:
                    check(v)
            except (ValueError, TypeError) as exc:
                fail([sec, key], str(exc))
            vals[sec][key] = v

    sc, dy, ct, se, po, ch, sh, ru = (vals[k] for k in SCHEMA)
    kwargs: dict[str, Any] = {}
    try:
        sens_kw = {k: se[k] for k in ("sigma2_d",) if k in se}
        if "rv" in se:
            sens_kw["Rv"] = se["rv"]
        if "ra" in se:
            sens_kw["Ra"] = se["ra"]
        kwargs["sensing"] = SensingModel(**sens_kw)
    except _BAD as exc:
        fail(["sensing"], str(exc))
    link_kw = {k: ch[k] for k in ("p_t_dbm", "n0_dbm", "data_bits") if k in ch}
    if "path_gain_db" in ch:
        link_kw["mean_path_gain"] = float(db_to_linear(ch["path_gain_db"]))
    try:
        kwargs["link"] = LinkModel(**link_kw)
    except _BAD as exc:
        fail(["channel"], str(exc))
    sched_kw = {k: sh[k] for k in ("scheme", "p_req", "period", "offsets") if k in sh}
    if "lambda" in sh:
        sched_kw["lam"] = sh["lambda"]
    try:
        kwargs["scheduler"] = SchedulerConfig(**sched_kw)
    except _BAD as exc:
        fail(["scheduler"], str(exc))

    kwargs.update(sc)
    kwargs.update(dy)
    kwargs.update(ct)
    if "mode" in se:
        kwargs["sensing_mode"] = se["mode"]
    kwargs.update(po)
    for k in ("slots", "seed", "replicas", "bootstrap"):
        if k in ru:
            kwargs[k] = ru[k]
    if "blocking" in ru:
        kwargs["blocking_intervals"] = ru["blocking"]
    try:
        return ScenarioConfig(**kwargs)
    except _BAD as exc:
        raise ConfigError(f"{source}: {exc}") from exc


def parse_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    return parse_config_text(text, str(path))

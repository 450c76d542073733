"""Command-line runner: ``uav-scc --experiment vs-continuous --out results/``.

Writes ``summary.txt`` (``key = value`` lines), per-slot trace CSVs and, for
sweeps, ``sweep.csv``. On any error every file written by the run is removed
and the exit status is nonzero.
"""

from __future__ import annotations

import argparse
import csv
import logging
import shutil
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import parse_config
from .errors import ConfigError, InvalidParameterError
from .experiments import (EXPERIMENTS, SWEEP_COLUMNS, ConsistencyMonitor, blocking_config, compare,
                          compare_summary, run_scheme, sweep_lambda_preq, sweep_mse, validity, with_scheduler)
from .scheduler import Scheme
from .simulator import ScenarioConfig, SlotRecord

log = logging.getLogger("uav_scc")

TRACE_SCHEMA_VERSION = 1
TRACE_COLUMNS = ("slot", "entity_type", "entity_id", "dq_x", "dq_y", "v_x", "v_y", "a_x", "a_y",
                 "scheduled", "sensed_ok", "mode", "dtc", "theta_total", "ue_est_x", "ue_est_y", "ue_err",
                 "mse_realized", "mse_expected")

# slots / replicas used when the command line leaves them unset
EXPERIMENT_DEFAULTS = {
    "validity": (120, 50),
    "vs-periodic-blocking": (120, 100),
}


@dataclass(frozen=True)
class RunManifest:
    config: str | None
    experiment: str
    out: Path
    seed: int | None = None
    slots: int | None = None
    replicas: int | None = None
    scheme: str | None = None
    trace: bool | None = None

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise InvalidParameterError(f"unknown experiment {self.experiment!r}")
        if self.slots is not None and self.slots < 0:
            raise InvalidParameterError("--slots must be >= 0")
        if self.replicas is not None and self.replicas < 1:
            raise InvalidParameterError("--replicas must be >= 1")
        if self.seed is not None and not 0 <= self.seed < 2**64:
            raise InvalidParameterError("--seed must be an unsigned 64-bit integer")


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".9g")


def trace_rows(records: list[SlotRecord]):
    for rec in records:
        theta_tot = rec.theta.sum(axis=1)
        for j in range(rec.x.shape[0]):
            yield [rec.slot, "uav", j, *(_fmt(v) for v in rec.x[j]), _fmt(rec.scheduled[j]),
                   _fmt(rec.sensed_ok[j]), rec.mode[j], int(rec.dtc[j]), int(theta_tot[j]), "", "", "", "", ""]
        for m in range(rec.ue_est.shape[0]):
            yield [rec.slot, "ue", m, "", "", "", "", "", "", "", "", "", "", "",
                   _fmt(rec.ue_est[m, 0]), _fmt(rec.ue_est[m, 1]), _fmt(rec.ue_err[m]),
                   _fmt(rec.mse_realized[m]), _fmt(rec.mse_expected[m])]


def write_trace(path: Path, records: list[SlotRecord]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        w.writerows(trace_rows(records))


def write_summary(path: Path, items: dict):
    with open(path, "w") as fh:
        for k, v in items.items():
            fh.write(f"{k} = {v if isinstance(v, str) else _fmt(v)}\n")


def read_summary(path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text().splitlines():
        if line.strip() and not line.startswith("#"):
            k, _, v = line.partition("=")
            out[k.strip()] = v.strip()
    return out


def write_sweep(path: Path, rows: list[dict]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in SWEEP_COLUMNS])


class _Outputs:
    """Tracks written files so a failed run can be rolled back."""

    def __init__(self, out: Path):
        self.out = out
        self.created_dir = not out.exists()
        out.mkdir(parents=True, exist_ok=True)
        self.files: list[Path] = []

    def path(self, name: str) -> Path:
        p = self.out / name
        self.files.append(p)
        return p

    def rollback(self):
        if self.created_dir:
            shutil.rmtree(self.out, ignore_errors=True)
            return
        for p in self.files:
            p.unlink(missing_ok=True)


def _traces(outputs: _Outputs, label: str, traces):
    for r, tr in enumerate(traces):
        name = f"trace_{label}.csv" if len(traces) == 1 else f"trace_{label}_r{r:03d}.csv"
        write_trace(outputs.path(name), tr)


def execute(manifest: RunManifest) -> int:
    cfg = parse_config(manifest.config) if manifest.config else ScenarioConfig()
    if manifest.seed is not None:
        cfg = replace(cfg, seed=manifest.seed)
    if manifest.scheme is not None:
        cfg = with_scheduler(cfg, scheme=Scheme(manifest.scheme))
    exp = manifest.experiment
    d_slots, d_reps = EXPERIMENT_DEFAULTS.get(exp, (cfg.slots, cfg.replicas))
    slots = manifest.slots if manifest.slots is not None else d_slots
    replicas = manifest.replicas if manifest.replicas is not None else d_reps
    trace = manifest.trace if manifest.trace is not None else not exp.startswith(("sweep", "validity"))

    outputs = _Outputs(manifest.out)
    monitor = ConsistencyMonitor()
    summary: dict = {"experiment": exp, "version": __version__, "trace_schema_version": TRACE_SCHEMA_VERSION,
                     "seed": cfg.seed, "slots": slots, "replicas": replicas}
    try:
        if exp == "custom":
            run = run_scheme(cfg, slots, replicas, trace, monitor)
            summary["scheme"] = run.scheme
            summary.update(run.metrics.summary())
            _traces(outputs, run.scheme, run.traces)
        elif exp == "validity":
            res = validity(cfg, seeds=replicas, slots=slots, monitor=monitor, keep_trace=trace)
            summary.update(none_cross_fraction=res.none_cross_fraction,
                           proposed_clean_fraction=res.proposed_clean_fraction,
                           exceed_3sigma_rate=res.exceed_3sigma_rate)
            crossed = [c for c in res.crossing_slots if c is not None]
            summary["none_median_crossing_slot"] = float(np.median(crossed)) if crossed else "never"
            if trace:
                for scheme, runs in res.runs.items():
                    _traces(outputs, scheme, runs[0].traces)
        elif exp in ("vs-continuous", "vs-periodic-lowrate", "vs-periodic-blocking"):
            c = cfg
            changes = {}
            if exp == "vs-continuous":
                other = Scheme.CONTINUOUS
            else:
                other = Scheme.PERIODIC
                if exp == "vs-periodic-lowrate":
                    changes["p_req"] = 0.70
                else:
                    c = blocking_config(cfg)
            runs = compare(c, other, slots, replicas, trace, monitor, **changes)
            summary.update(compare_summary(runs, other.value))
            if trace:
                for label, run in runs.items():
                    _traces(outputs, label, run.traces)
        else:
            rows = (sweep_mse if exp == "sweep-mse" else sweep_lambda_preq)(cfg, slots, replicas, monitor=monitor)
            write_sweep(outputs.path("sweep.csv"), rows)
            summary["grid_points"] = len(rows)
            if exp == "sweep-mse":
                fr = [r["failure_rate"] for r in rows]
                summary["failure_rate_nonincreasing"] = int(bool(np.all(np.diff(fr) <= 0)))
        summary["self_check_violations"] = len(monitor.violations)
        write_summary(outputs.path("summary.txt"), summary)
    except BaseException:
        outputs.rollback()
        raise
    if not monitor.ok:
        for v in monitor.violations[:20]:
            log.error("self-check: %s", v)
        return 3
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="uav-scc", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="YAML scenario file (defaults apply to omitted keys)")
    p.add_argument("--experiment", default="custom", choices=EXPERIMENTS)
    p.add_argument("--slots", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--replicas", type=int)
    p.add_argument("--out", default="results", help="output directory")
    p.add_argument("--scheme", choices=[s.value for s in Scheme])
    p.add_argument("--trace", action=argparse.BooleanOptionalAction, default=None,
                   help="write per-slot trace CSVs (default: on except for sweeps and validity)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        manifest = RunManifest(config=args.config, experiment=args.experiment, out=Path(args.out),
                               seed=args.seed, slots=args.slots, replicas=args.replicas,
                               scheme=args.scheme, trace=args.trace)
        return execute(manifest)
    except (ConfigError, InvalidParameterError) as exc:
        print(f"uav-scc: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # any module failure is a failed run
        print(f"uav-scc: run failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Canned experiments: validity, scheme comparisons and parameter sweeps.

Each runner returns plain Python results (dicts / lists of rows) so the CLI
and the acceptance checks share one implementation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidParameterError
from .scheduler import Scheme
from .simulator import DEFAULT_BLOCKING, CampaignMetrics, ScenarioConfig, SlotRecord, build_scenario, run_campaign

log = logging.getLogger(__name__)

EXPERIMENTS = ("validity", "vs-continuous", "vs-periodic-lowrate", "vs-periodic-blocking",
               "sweep-mse", "sweep-lambda-preq", "custom")

MSE_GRID = tuple(float(k * k) for k in range(2, 13))
LAMBDA_GRID = (0.5, 0.6, 0.7, 0.8, 0.9, 1.0)
PREQ_GRID = (0.70, 0.75, 0.80, 0.85, 0.90, 0.95)


def with_scheduler(cfg: ScenarioConfig, **changes) -> ScenarioConfig:
    return replace(cfg, scheduler=replace(cfg.scheduler, **changes))


class ConsistencyMonitor:
    """Per-slot self-checks; a run with any violation exits nonzero."""

    def __init__(self):
        self.violations: list[str] = []

    def __call__(self, replica: int, rec: SlotRecord):
        cl = rec.mode == "CL"
        if np.any(cl & ~(rec.scheduled & rec.link_ok.all(axis=1))):
            self.violations.append(f"replica {replica} slot {rec.slot}: CL without a delivered sensing round")
        if not np.all(np.isfinite(rec.mse_realized)) or np.any(rec.mse_realized < 0):
            self.violations.append(f"replica {replica} slot {rec.slot}: invalid realized MSE")

    @property
    def ok(self) -> bool:
        return not self.violations


@dataclass
class SchemeRun:
    scheme: str
    metrics: CampaignMetrics
    traces: list = field(default_factory=list)


def run_scheme(cfg: ScenarioConfig, slots: int, replicas: int, keep_trace: bool = False,
               monitor: ConsistencyMonitor | None = None) -> SchemeRun:
    res = run_campaign(build_scenario(cfg), slots=slots, replicas=replicas, keep_trace=keep_trace, on_record=monitor)
    return SchemeRun(scheme=cfg.scheduler.scheme.value, metrics=res.metrics, traces=res.traces)


def reduction(new: float, ref: float) -> float:
    """Percentage reduction of ``new`` relative to ``ref`` (0 when ``ref`` is 0)."""
    return 100.0 * (1.0 - new / ref) if ref > 0 else 0.0


def first_crossing(trace: list[SlotRecord], mse_req) -> int | None:
    """First slot in which any UE's realized MSE exceeds its requirement."""
    req = np.asarray(mse_req, float)
    for rec in trace:
        if np.any(rec.mse_realized > req):
            return rec.slot
    return None


@dataclass
class ValidityResult:
    none_cross_fraction: float     # seeds whose no-sensing run crosses within the horizon
    proposed_clean_fraction: float  # seeds whose proposed run never crosses
    exceed_3sigma_rate: float      # fraction of UE-slots with error beyond 3x theoretical RMSE
    crossing_slots: list
    runs: dict


def validity(cfg: ScenarioConfig, seeds: int = 50, slots: int = 120, horizon: int = 60,
             monitor: ConsistencyMonitor | None = None, keep_trace: bool = False) -> ValidityResult:
    """No-sensing vs proposed, one scenario (UE draw) per seed."""
    crossings, clean, exceed, ue_slots = [], 0, 0, 0
    runs = {"none": [], "proposed": []}
    for k in range(seeds):
        base = replace(cfg, seed=cfg.seed + k)
        none_run = run_scheme(with_scheduler(base, scheme=Scheme.NONE), slots, 1, True, monitor)
        crossings.append(first_crossing(none_run.traces[0], np.broadcast_to(base.mse_req, (none_run.metrics.n_ue,))))
        prop = run_scheme(with_scheduler(base, scheme=Scheme.PROPOSED), slots, 1, True, monitor)
        if prop.metrics.failures.sum() == 0:
            clean += 1
        exceed += int(prop.metrics.exceed_3sigma.sum())
        ue_slots += prop.metrics.slots * prop.metrics.n_ue
        if keep_trace:
            runs["none"].append(none_run)
            runs["proposed"].append(prop)
    crossed = sum(c is not None and c < horizon for c in crossings)
    return ValidityResult(none_cross_fraction=crossed / seeds if seeds else 0.0,
                          proposed_clean_fraction=clean / seeds if seeds else 0.0,
                          exceed_3sigma_rate=exceed / ue_slots if ue_slots else 0.0,
                          crossing_slots=crossings, runs=runs)


def compare(cfg: ScenarioConfig, other: Scheme, slots: int, replicas: int, keep_trace: bool = False,
            monitor: ConsistencyMonitor | None = None, **sched_changes) -> dict[str, SchemeRun]:
    """Proposed scheme against a benchmark on the same scenario and noise."""
    out = {}
    for scheme in (Scheme.PROPOSED, other):
        c = with_scheduler(cfg, scheme=scheme, **sched_changes)
        out[scheme.value] = run_scheme(c, slots, replicas, keep_trace, monitor)
    return out


def compare_summary(runs: dict[str, SchemeRun], other: str) -> dict[str, float]:
    p, o = runs["proposed"].metrics, runs[other].metrics
    out = {
        "proposed_scheduling_rate": p.fleet_scheduling_rate,
        f"{other}_scheduling_rate": o.fleet_scheduling_rate,
        "proposed_symbol_rate": p.fleet_symbol_rate,
        f"{other}_symbol_rate": o.fleet_symbol_rate,
        "proposed_failure_rate": p.mean_failure_rate,
        f"{other}_failure_rate": o.mean_failure_rate,
        "scheduling_reduction_pct": reduction(p.fleet_scheduling_rate, o.fleet_scheduling_rate),
        "symbol_reduction_pct": reduction(p.fleet_symbol_rate, o.fleet_symbol_rate),
        "failure_reduction_pct": reduction(p.mean_failure_rate, o.mean_failure_rate),
    }
    for m in range(p.n_ue):
        out[f"ue{m}_proposed_failure_rate"] = float(p.failure_rate[m])
        out[f"ue{m}_{other}_failure_rate"] = float(o.failure_rate[m])
    out["ues_improved"] = int(np.sum(p.failure_rate < o.failure_rate))
    return out


def blocking_config(cfg: ScenarioConfig) -> ScenarioConfig:
    n = cfg.hps.shape[0]
    intervals = tuple(b for b in DEFAULT_BLOCKING if b[0] < n)
    return replace(cfg, blocking_intervals=cfg.blocking_intervals or intervals)


SWEEP_COLUMNS = ("mse_req", "lam", "p_req", "slots", "replicas", "failure_rate", "max_ue_failure_rate",
                 "scheduling_rate", "symbol_rate")


def _sweep_row(cfg: ScenarioConfig, m: CampaignMetrics) -> dict:
    return {
        "mse_req": float(np.mean(cfg.mse_req)), "lam": cfg.scheduler.lam, "p_req": cfg.scheduler.p_req,
        "slots": m.slots, "replicas": m.replicas, "failure_rate": m.mean_failure_rate,
        "max_ue_failure_rate": float(m.failure_rate.max()) if m.n_ue else 0.0,
        "scheduling_rate": m.fleet_scheduling_rate, "symbol_rate": m.fleet_symbol_rate,
    }


def sweep_mse(cfg: ScenarioConfig, slots: int, replicas: int, grid=MSE_GRID,
              monitor: ConsistencyMonitor | None = None) -> list[dict]:
    rows = []
    for req in grid:
        c = replace(cfg, mse_req=float(req))
        rows.append(_sweep_row(c, run_scheme(c, slots, replicas, monitor=monitor).metrics))
        log.info("sweep-mse: mse_req=%g done", req)
    return rows


def sweep_lambda_preq(cfg: ScenarioConfig, slots: int, replicas: int, lams=LAMBDA_GRID, preqs=PREQ_GRID,
                      monitor: ConsistencyMonitor | None = None) -> list[dict]:
    rows = []
    for p in preqs:
        for lam in lams:
            c = with_scheduler(cfg, lam=float(lam), p_req=float(p))
            rows.append(_sweep_row(c, run_scheme(c, slots, replicas, monitor=monitor).metrics))
            log.info("sweep-lambda-preq: lambda=%g p_req=%g done", lam, p)
    return rows


def is_nonincreasing(values, tol: float = 0.0) -> bool:
    v = np.asarray(values, float)
    return bool(np.all(np.diff(v) <= tol))


def check_experiment(name: str):
    if name not in EXPERIMENTS:
        raise InvalidParameterError(f"unknown experiment {name!r}; expected one of {', '.join(EXPERIMENTS)}")

"""Scenario construction, anchor assignment and the per-slot closed loop.

Each slot runs, in order: SNR draw, scheduling decision, sensing of the
scheduled UAVs, uplink trials, UE positioning against the hovering points,
control dispatch and the dynamics step. Every slot consumes a fixed amount
of randomness so that runs with different schemes share their noise
realisations (common random numbers).
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .channel import DEFAULT_PATH_GAIN, LinkModel, success_probability
from .control import PREDICTION_POWER_CAP, CovariancePredictor, Mode, default_lqr_weights, lqr_gain
from .dynamics import STATE_DIM, build_dynamics, psd_factor
from .errors import ConfigError, DegenerateGeometryError, InvalidParameterError, NumericError
from .positioning import UeGeometry, ils_estimate_batch
from .scheduler import SchedulerConfig, Scheme, ServiceMap, decide, qos_budget
from .sensing import SensingModel, jacobian_uav, ml_position

log = logging.getLogger(__name__)

DEFAULT_HPS = np.array([
    [1000.0, 0.0], [785.0, 715.0], [-980.0, 724.0], [-951.0, 164.0],
    [-382.0, 990.0], [758.0, -624.0], [-836.0, -820.0], [172.0, -977.0],
])

# (uav index, first slot, last slot), both ends inclusive
DEFAULT_BLOCKING = ((3, 63, 72), (5, 98, 103), (6, 20, 24))

LINKS_PER_UAV = 3


def circle_points(n: int, radius: float, start_angle: float = 0.0) -> np.ndarray:
    ang = start_angle + 2.0 * np.pi * np.arange(n) / n
    return radius * np.column_stack([np.cos(ang), np.sin(ang)])


@dataclass(frozen=True, eq=False)
class ScenarioConfig:
    """Everything needed to build and run a scenario.

    ``beacons`` / ``ues`` left as ``None`` are generated: beacons evenly on a
    circle, UEs uniformly in a square centred on the origin (seeded).
    """

    hps: np.ndarray = field(default_factory=lambda: DEFAULT_HPS.copy())
    beacons: np.ndarray | None = None
    ues: np.ndarray | None = None
    n_beacons: int = 8
    beacon_radius: float = 2000.0
    n_ues: int = 15
    ue_area_side: float = 1000.0
    h_v: float = 50.0
    n_serving: int = 3
    # dynamics
    dt: float = 1.0
    rho: float = 0.01
    sigma2_ax: float = 0.25
    sigma2_ay: float = 0.25
    lqr_q: np.ndarray | None = None
    lqr_r: np.ndarray | None = None
    # sensing and positioning
    sensing: SensingModel = field(default_factory=SensingModel)
    sensing_mode: str = "direct"
    sigma2_r: float = 1.0
    mse_req: float | np.ndarray = 100.0
    # channel and scheduling
    link: LinkModel = field(default_factory=LinkModel)
    scheduler: SchedulerConfig = field(default_factory=SchedulerConfig)
    # run
    slots: int = 10_000
    seed: int = 0
    replicas: int = 1
    blocking_intervals: tuple[tuple[int, int, int], ...] = ()
    bootstrap: bool = True

    def __post_init__(self):
        hps = np.asarray(self.hps, float)
        object.__setattr__(self, "hps", hps)
        if hps.ndim != 2 or hps.shape[1] != 2:
            raise InvalidParameterError("hovering points must be an (N_A, 2) array")
        for name in ("beacons", "ues"):
            v = getattr(self, name)
            if v is not None:
                v = np.asarray(v, float)
                if v.ndim != 2 or v.shape[1] != 2:
                    raise InvalidParameterError(f"{name} must be an (n, 2) array")
                if not np.all(np.isfinite(v)):
                    raise InvalidParameterError(f"{name} must be finite")
                object.__setattr__(self, name, v)
        if not np.all(np.isfinite(hps)):
            raise InvalidParameterError("hovering points must be finite")
        if self.n_serving < 3 or hps.shape[0] < self.n_serving:
            raise InvalidParameterError("need N_A >= n_serving >= 3")
        n_b = self.n_beacons if self.beacons is None else self.beacons.shape[0]
        if n_b < LINKS_PER_UAV:
            raise InvalidParameterError("need at least three beacons")
        if self.replicas < 1:
            raise InvalidParameterError("replicas must be >= 1")
        if self.slots < 0:
            raise InvalidParameterError("slots must be >= 0")
        if self.sigma2_r < 0:
            raise InvalidParameterError("sigma2_r must be >= 0")
        if self.h_v < 0:
            raise InvalidParameterError("h_v must be >= 0")
        if self.sensing_mode not in ("direct", "ml"):
            raise InvalidParameterError(f"unknown sensing mode {self.sensing_mode!r}")
        for j, start, end in self.blocking_intervals:
            if not 0 <= j < hps.shape[0] or end < start:
                raise InvalidParameterError(f"bad blocking interval {(j, start, end)}")


def hdop(H) -> float:
    G = H.T @ H
    if np.linalg.cond(G) > 1e12:
        return math.inf
    return math.sqrt(float(np.trace(np.linalg.inv(G))))


def best_subset(candidates, k: int, jacobian) -> tuple[int, ...]:
    """Exhaustive min-HDOP size-``k`` subset; lowest index tuple wins ties."""
    best, best_val = None, math.inf
    for combo in itertools.combinations(range(len(candidates)), k):
        try:
            val = hdop(jacobian(np.asarray(combo)))
        except DegenerateGeometryError:
            continue
        if val < best_val - 1e-12:
            best, best_val = combo, val
    if best is None:
        raise ConfigError("every anchor subset is degenerate")
    return best


@dataclass(frozen=True, eq=False)
class Scenario:
    config: ScenarioConfig
    hps: np.ndarray
    beacons: np.ndarray
    ues: np.ndarray
    uav_beacons: np.ndarray   # (N_A, 3)
    ue_serving: np.ndarray    # (M, n_serving)

    @property
    def n_uav(self) -> int:
        return self.hps.shape[0]

    @property
    def n_ue(self) -> int:
        return self.ues.shape[0]


def assign_anchors(hps, beacons, ues, h_v: float, n_serving: int) -> tuple[np.ndarray, np.ndarray]:
    """Min-HDOP serving UAVs per UE and sensing beacons per UAV."""
    hps = np.asarray(hps, float)
    beacons = np.asarray(beacons, float)
    uav_beacons = np.array([
        best_subset(beacons, LINKS_PER_UAV, lambda c, hp=hp: jacobian_uav(hp, beacons[c], h_v)) for hp in hps])
    ue_serving = np.array([
        best_subset(hps, n_serving, lambda c, p=p: UeGeometry.at(p, hps[c], h_v).H) for p in np.asarray(ues, float)])
    return uav_beacons, ue_serving


def scenario_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng([seed, 0])


def replica_rng(seed: int, replica: int) -> np.random.Generator:
    return np.random.default_rng([seed, 1, replica])


def build_scenario(config: ScenarioConfig) -> Scenario:
    rng = scenario_rng(config.seed)
    beacons = config.beacons if config.beacons is not None else circle_points(config.n_beacons, config.beacon_radius)
    if config.ues is not None:
        ues = config.ues
    else:
        half = config.ue_area_side / 2.0
        ues = rng.uniform(-half, half, size=(config.n_ues, 2))
    uav_beacons, ue_serving = assign_anchors(config.hps, beacons, ues, config.h_v, config.n_serving)
    return Scenario(config=config, hps=config.hps, beacons=beacons, ues=ues,
                    uav_beacons=uav_beacons, ue_serving=ue_serving)


@dataclass(eq=False)
class SlotRecord:
    slot: int
    x: np.ndarray              # (N_A, 6) true state at the start of the slot
    scheduled: np.ndarray      # (N_A,) bool
    sensed_ok: np.ndarray      # (N_A,) bool, all three uplinks delivered
    mode: np.ndarray           # (N_A,) "CL" / "OL"
    dtc: np.ndarray            # (N_A,) counter when the decision was taken
    u: np.ndarray              # (N_A, 2)
    qdq_diag: np.ndarray       # (N_A, 2) predicted second moment of x's position
    theta: np.ndarray          # (N_A, 3)
    p_link: np.ndarray         # (N_A, 3) success probability of each link trial
    gamma: np.ndarray          # (N_A, 3)
    link_ok: np.ndarray        # (N_A, 3)
    ue_est: np.ndarray         # (M, 2)
    ue_err: np.ndarray         # (M,)
    mse_realized: np.ndarray   # (M,)
    mse_expected: np.ndarray   # (M,)
    total_symbols: int
    warnings: list[str] = field(default_factory=list)


@dataclass
class CampaignMetrics:
    """Summed counters; merging replicas is plain addition (max for extremes)."""

    n_uav: int
    n_ue: int
    dt: float = 1.0
    slots: int = 0
    scheduled: np.ndarray = None
    symbols: np.ndarray = None
    cl: np.ndarray = None
    failures: np.ndarray = None
    exceed_3sigma: np.ndarray = None
    max_abs_dq: np.ndarray = None
    mse_sum: np.ndarray = None
    replicas: int = 0

    def __post_init__(self):
        if self.scheduled is None:
            self.scheduled = np.zeros(self.n_uav, np.int64)
            self.symbols = np.zeros(self.n_uav, np.int64)
            self.cl = np.zeros(self.n_uav, np.int64)
            self.failures = np.zeros(self.n_ue, np.int64)
            self.exceed_3sigma = np.zeros(self.n_ue, np.int64)
            self.max_abs_dq = np.zeros(self.n_uav)
            self.mse_sum = np.zeros(self.n_ue)

    def add(self, rec: SlotRecord, mse_req: np.ndarray):
        self.slots += 1
        self.scheduled += rec.scheduled
        self.symbols += rec.theta.sum(axis=1)
        self.cl += rec.sensed_ok
        self.failures += rec.mse_realized > mse_req
        self.exceed_3sigma += rec.ue_err**2 > 9.0 * rec.mse_realized
        self.max_abs_dq = np.maximum(self.max_abs_dq, np.abs(rec.x[:, :2]).max(axis=1))
        self.mse_sum += rec.mse_realized

    def merge(self, other: "CampaignMetrics") -> "CampaignMetrics":
        if (self.n_uav, self.n_ue) != (other.n_uav, other.n_ue):
            raise InvalidParameterError("cannot merge metrics of different scenarios")
        return CampaignMetrics(
            n_uav=self.n_uav, n_ue=self.n_ue, dt=self.dt, slots=self.slots + other.slots,
            scheduled=self.scheduled + other.scheduled, symbols=self.symbols + other.symbols,
            cl=self.cl + other.cl, failures=self.failures + other.failures,
            exceed_3sigma=self.exceed_3sigma + other.exceed_3sigma,
            max_abs_dq=np.maximum(self.max_abs_dq, other.max_abs_dq),
            mse_sum=self.mse_sum + other.mse_sum, replicas=self.replicas + other.replicas)

    def _per_slot(self, v):
        return v / self.slots if self.slots else np.zeros(np.shape(v))

    @property
    def failure_rate(self) -> np.ndarray:
        return self._per_slot(self.failures)

    @property
    def mean_failure_rate(self) -> float:
        return float(self.failure_rate.mean()) if self.n_ue else 0.0

    @property
    def scheduling_rate(self) -> np.ndarray:
        """Per-UAV sensing events per second."""
        return self._per_slot(self.scheduled) / self.dt

    @property
    def fleet_scheduling_rate(self) -> float:
        return float(self.scheduling_rate.sum())

    @property
    def fleet_symbol_rate(self) -> float:
        return float(self._per_slot(self.symbols).sum()) / self.dt

    @property
    def exceed_3sigma_rate(self) -> float:
        return float(self._per_slot(self.exceed_3sigma).mean()) if self.n_ue else 0.0

    def summary(self) -> dict[str, float]:
        out = {
            "slots": self.slots,
            "replicas": self.replicas,
            "fleet_scheduling_rate": self.fleet_scheduling_rate,
            "fleet_symbol_rate": self.fleet_symbol_rate,
            "mean_failure_rate": self.mean_failure_rate,
            "max_failure_rate": float(self.failure_rate.max()) if self.n_ue else 0.0,
            "exceed_3sigma_rate": self.exceed_3sigma_rate,
            "max_abs_dq": float(self.max_abs_dq.max()) if self.n_uav else 0.0,
        }
        for j, r in enumerate(self.scheduling_rate):
            out[f"uav{j}_scheduling_rate"] = float(r)
        for m, r in enumerate(self.failure_rate):
            out[f"ue{m}_failure_rate"] = float(r)
        return out


class World:
    """Mutable per-replica state of the closed loop."""

    def __init__(self, scenario: Scenario, rng: np.random.Generator):
        cfg = scenario.config
        self.scenario = scenario
        self.cfg = cfg
        self.rng = rng
        self.model = build_dynamics(cfg.dt, cfg.rho, cfg.sigma2_ax, cfg.sigma2_ay)
        n, M = scenario.n_uav, scenario.n_ue
        self.scheme = cfg.scheduler.scheme
        if self.scheme is Scheme.NONE:
            self.K = np.zeros((2, STATE_DIM))
        else:
            q0, r0 = default_lqr_weights()
            self.K = lqr_gain(self.model, q0 if cfg.lqr_q is None else cfg.lqr_q,
                              r0 if cfg.lqr_r is None else cfg.lqr_r)
        self.Ac = self.model.A + self.model.B @ self.K
        self.Lw = self.model.noise_factor

        hps, beacons = scenario.hps, scenario.beacons
        self.R_eta = np.stack([
            cfg.sensing.covariance_at(hps[j], beacons[scenario.uav_beacons[j]], cfg.h_v) for j in range(n)])
        self.L_eta = np.stack([psd_factor(R) for R in self.R_eta])

        self.geoms = [UeGeometry.at(scenario.ues[m], hps[scenario.ue_serving[m]], cfg.h_v) for m in range(M)]
        mse_req = np.broadcast_to(np.asarray(cfg.mse_req, float), (M,)).copy()
        self.mse_req = mse_req
        budgets = [qos_budget(g, float(r), cfg.sigma2_r) for g, r in zip(self.geoms, mse_req)]
        self.service = ServiceMap.build(self.geoms, scenario.ue_serving, budgets, n)
        self.base_mse = np.array([cfg.sigma2_r * np.trace(g.P_mat) for g in self.geoms])
        self.weights = np.stack([g.weights for g in self.geoms])  # (M, N)
        self.serving_hps = hps[scenario.ue_serving]                # (M, N, 2)
        # UEs are static: each fix warm-starts from the previous one
        self.ue_fix = self.serving_hps.mean(axis=1)

        # second-moment tables: before any sensing (state known exactly) and after
        self._prior = [CovariancePredictor(self.model, self.K, np.zeros((6, 6)), self.R_eta[j]) for j in range(n)]
        self._post = [CovariancePredictor(self.model, self.K, self.R_eta[j], self.R_eta[j]) for j in range(n)]
        self._table_len = 0
        self._ensure_tables(PREDICTION_POWER_CAP + 1)
        self._acpow = [np.eye(STATE_DIM)]
        for _ in range(PREDICTION_POWER_CAP):
            self._acpow.append(self.Ac @ self._acpow[-1])
        self._acpow = np.stack(self._acpow)

        self.blocked_until: list[tuple[int, int, int]] = list(cfg.blocking_intervals)
        self.x = np.zeros((n, STATE_DIM))
        self.dtc = np.zeros(n, np.int64)
        self.sensed_once = np.zeros(n, bool)
        self.last_xhat = np.zeros((n, STATE_DIM))
        self.slot = 0
        self.qdq_now = np.zeros((n, 2, 2))
        self.mse_expected_now = self.base_mse.copy()
        self._warned: set[str] = set()

    def _ensure_tables(self, upto: int):
        if upto <= self._table_len:
            return
        size = max(upto, 2 * self._table_len)
        pri = [p.tables(size) for p in self._prior]
        post = [p.tables(size) for p in self._post]
        self._mean = np.stack([[a[0], b[0]] for a, b in zip(pri, post)])  # (N, 2, T, 2, 6)
        self._cl = np.stack([[a[1], b[1]] for a, b in zip(pri, post)])    # (N, 2, T, 2, 2)
        self._ol = np.stack([[a[2], b[2]] for a, b in zip(pri, post)])
        self._table_len = size

    def is_blocked(self, slot: int) -> np.ndarray:
        out = np.zeros(self.scenario.n_uav, bool)
        for j, start, end in self.blocked_until:
            if start <= slot <= end:
                out[j] = True
        return out

    def mode_moments(self) -> tuple[np.ndarray, np.ndarray]:
        """Next-slot position second moments ``(Qdq_cl, Qdq_ol)`` per UAV."""
        self._ensure_tables(int(self.dtc.max()) + 1)
        idx = np.arange(self.scenario.n_uav)
        post = self.sensed_once.astype(int)
        mean = np.einsum("nij,nj->ni", self._mean[idx, post, self.dtc], self.last_xhat)
        mm = mean[:, :, None] * mean[:, None, :]
        return mm + self._cl[idx, post, self.dtc], mm + self._ol[idx, post, self.dtc]

    def run_slot(self) -> SlotRecord:
        sc, cfg, rng = self.scenario, self.cfg, self.rng
        n, M = sc.n_uav, sc.n_ue
        t = self.slot

        # fixed-size draws, identical across schemes
        g = rng.exponential(1.0, size=sc.beacons.shape[0])
        z_eta = rng.standard_normal((n, STATE_DIM))
        u_link = rng.random((n, LINKS_PER_UAV))
        z_range = rng.standard_normal((n, LINKS_PER_UAV))
        n_r = rng.standard_normal(sc.ue_serving.shape)
        z_w = rng.standard_normal((n, STATE_DIM))

        gamma = cfg.link.snr_scale * g[sc.uav_beacons]
        qdq_cl, qdq_ol = self.mode_moments()

        bootstrap = cfg.bootstrap and t == 0 and self.scheme is not Scheme.NONE
        if bootstrap:
            sched_cfg = replace(cfg.scheduler, scheme=Scheme.CONTINUOUS)
        else:
            sched_cfg = cfg.scheduler
        dec = decide(sched_cfg, t, qdq_ol, self.service, gamma, cfg.link.data_bits)
        for w in dec.warnings:
            if w not in self._warned:
                self._warned.add(w)
                log.warning(w)
        phi = dec.phi.astype(bool)

        # sensing of scheduled UAVs
        xhat = self.x + np.einsum("nij,nj->ni", self.L_eta, z_eta)
        if cfg.sensing_mode == "ml":
            for j in np.flatnonzero(phi):
                b = sc.beacons[sc.uav_beacons[j]]
                q = sc.hps[j] + self.x[j, :2]
                d = np.linalg.norm(q[None, :] - b, axis=1) + math.sqrt(cfg.sensing.sigma2_d) * z_range[j]
                xhat[j, :2] = ml_position(d, b, cfg.h_v, init=sc.hps[j]) - sc.hps[j]

        # uplinks
        p_link = np.zeros(gamma.shape)
        if phi.any():
            p_link[phi] = success_probability(dec.theta[phi], gamma[phi], cfg.link.data_bits)
        link_ok = (u_link < p_link) & ~self.is_blocked(t)[:, None]
        if bootstrap:
            link_ok = np.ones_like(link_ok)
        success = phi & link_ok.all(axis=1)

        # UE service from the true UAV positions
        q_true = sc.hps + self.x[:, :2]
        diff = sc.ues[:, None, :] - q_true[sc.ue_serving]
        r_true = np.sqrt(np.sum(diff**2, axis=2) + cfg.h_v**2)
        r_hat = r_true + math.sqrt(cfg.sigma2_r) * n_r
        ue_est = ils_estimate_batch(r_hat, self.serving_hps, cfg.h_v, self.ue_fix)
        ue_err = np.linalg.norm(ue_est - sc.ues, axis=1)
        proj = np.einsum("mni,mnij,mnj->mn", self.service.h, self.qdq_now[sc.ue_serving], self.service.h)
        mse_realized = self.base_mse + np.sum(self.weights * proj, axis=1)
        mse_expected = self.mse_expected_now

        # control and dynamics
        pw = np.minimum(self.dtc, PREDICTION_POWER_CAP)
        x_pred = np.einsum("nij,nj->ni", self._acpow[pw], self.last_xhat)
        x_ctrl = np.where(success[:, None], xhat, x_pred)
        u = x_ctrl @ self.K.T
        w = z_w @ self.Lw.T
        x_next = self.x @ self.model.A.T + u @ self.model.B.T + w
        if not np.all(np.isfinite(x_next)):
            raise NumericError(f"non-finite UAV state at slot {t}")

        # expected MSE of the next slot under the decision-time CL probabilities
        p_cl = np.prod(p_link, axis=1)
        if bootstrap:
            p_cl = np.ones(n)
        h = self.service.h
        d_cl = np.einsum("mni,mnij,mnj->mn", h, qdq_cl[sc.ue_serving], h)
        d_ol = np.einsum("mni,mnij,mnj->mn", h, qdq_ol[sc.ue_serving], h)
        pc = p_cl[sc.ue_serving]
        mse_expected_next = self.base_mse + np.sum(self.weights * (pc * d_cl + (1 - pc) * d_ol), axis=1)

        rec = SlotRecord(
            slot=t, x=self.x.copy(), scheduled=phi, sensed_ok=success,
            mode=np.where(success, Mode.CL.value, Mode.OL.value), dtc=self.dtc.copy(), u=u,
            qdq_diag=np.stack([self.qdq_now[:, 0, 0], self.qdq_now[:, 1, 1]], axis=1),
            theta=dec.theta, p_link=p_link, gamma=gamma, link_ok=link_ok, ue_est=ue_est, ue_err=ue_err,
            mse_realized=mse_realized, mse_expected=mse_expected, total_symbols=dec.total_symbols,
            warnings=dec.warnings)

        # commit
        self.x = x_next
        self.qdq_now = np.where(success[:, None, None], qdq_cl, qdq_ol)
        self.mse_expected_now = mse_expected_next
        self.last_xhat = np.where(success[:, None], xhat, self.last_xhat)
        self.dtc = np.where(success, 1, self.dtc + 1)
        self.sensed_once |= success
        self.ue_fix = ue_est
        self.slot += 1
        return rec


@dataclass
class CampaignResult:
    metrics: CampaignMetrics
    traces: list[list[SlotRecord]]


def run_campaign(scenario: Scenario, slots: int | None = None, seed: int | None = None, replicas: int | None = None,
                 keep_trace: bool = False, on_record=None) -> CampaignResult:
    """Run ``replicas`` independent worlds; metrics are summed over all of them.

    ``on_record(replica, record)`` is called for every slot if given.
    """
    cfg = scenario.config
    slots = cfg.slots if slots is None else slots
    seed = cfg.seed if seed is None else seed
    replicas = cfg.replicas if replicas is None else replicas
    if replicas < 1:
        raise InvalidParameterError("replicas must be >= 1")
    total = CampaignMetrics(n_uav=scenario.n_uav, n_ue=scenario.n_ue, dt=cfg.dt)
    traces = []
    for r in range(replicas):
        world = World(scenario, replica_rng(seed, r))
        metrics = CampaignMetrics(n_uav=scenario.n_uav, n_ue=scenario.n_ue, dt=cfg.dt, replicas=1)
        trace = []
        for _ in range(slots):
            rec = world.run_slot()
            metrics.add(rec, world.mse_req)
            if keep_trace:
                trace.append(rec)
            if on_record is not None:
                on_record(r, rec)
        total = total.merge(metrics)
        if keep_trace:
            traces.append(trace)
    return CampaignResult(metrics=total, traces=traces)


def default_config(**overrides) -> ScenarioConfig:
    return ScenarioConfig(**overrides)


__all__ = [
    "DEFAULT_HPS", "DEFAULT_BLOCKING", "DEFAULT_PATH_GAIN", "ScenarioConfig", "Scenario", "SlotRecord",
    "CampaignMetrics", "CampaignResult", "World", "assign_anchors", "build_scenario", "run_campaign",
    "circle_points", "hdop", "best_subset", "default_config",
]

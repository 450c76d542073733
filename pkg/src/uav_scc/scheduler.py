"""Sensing scheduling and blocklength allocation policies.

The QoS-oriented policy turns each UE's MSE requirement into a per-UAV
budget on the projected position variance ``h^T Qdq h`` and senses a UAV
only when staying open-loop for another slot would push that projection to
``lam^2`` times the tightest budget among the UEs it serves.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np

from .channel import min_blocklength_symbols
from .errors import InvalidParameterError
from .positioning import UeGeometry, expected_uncertainty_diag

log = logging.getLogger(__name__)


class Scheme(str, enum.Enum):
    PROPOSED = "proposed"
    CONTINUOUS = "continuous"
    PERIODIC = "periodic"
    NONE = "none"


@dataclass(frozen=True)
class SchedulerConfig:
    lam: float = 0.8
    p_req: float = 0.95
    scheme: Scheme = Scheme.PROPOSED
    period: int = 7
    offsets: tuple[int, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        if not 0.0 < self.lam <= 1.0:
            raise InvalidParameterError(f"lambda must lie in (0, 1], got {self.lam}")
        if not 0.5 <= self.p_req < 1.0:
            raise InvalidParameterError(f"p_req must lie in [0.5, 1), got {self.p_req}")
        if self.period < 1:
            raise InvalidParameterError(f"period must be >= 1, got {self.period}")

    @property
    def link_target(self) -> float:
        """Per-link success target; three links must all succeed."""
        return self.p_req ** (1.0 / 3.0)

    def offset(self, j: int) -> int:
        if self.offsets is not None:
            return self.offsets[j] % self.period
        return j % self.period


@dataclass(frozen=True)
class UeQosBudget:
    mse_req: float
    thr: float
    sigma2_budget: float
    feasible: bool


def qos_budget(geom: UeGeometry, mse_req: float, sigma2_r: float) -> UeQosBudget:
    """Split a UE's MSE requirement into a per-UAV projected-variance budget."""
    tr_p = float(np.trace(geom.P_mat))
    thr = mse_req - sigma2_r * tr_p
    return UeQosBudget(mse_req=mse_req, thr=thr, sigma2_budget=thr / tr_p, feasible=thr > 0)


def projected_uncertainty(h, Qdq) -> float:
    h = np.asarray(h, float)
    return float(h @ np.asarray(Qdq, float) @ h)


@dataclass(frozen=True, eq=False)
class SchedulingDecision:
    phi: np.ndarray
    theta: np.ndarray
    kappa: np.ndarray
    total_symbols: int
    warnings: list[str] = field(default_factory=list)


@dataclass(frozen=True, eq=False)
class ServiceMap:
    """UE to UAV service links: which UAVs serve each UE, with unit vectors
    and budgets. ``serving`` is (M, N) UAV indices, ``h`` is (M, N, 2)."""

    serving: np.ndarray
    h: np.ndarray
    sigma2_budget: np.ndarray
    feasible: np.ndarray
    n_uav: int
    idle: np.ndarray = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "idle", np.setdiff1d(np.arange(self.n_uav), self.serving))

    @classmethod
    def build(cls, geoms: list[UeGeometry], serving, budgets: list[UeQosBudget], n_uav: int) -> "ServiceMap":
        return cls(serving=np.asarray(serving, int), h=np.stack([g.H for g in geoms]),
                   sigma2_budget=np.array([b.sigma2_budget for b in budgets]),
                   feasible=np.array([b.feasible for b in budgets]), n_uav=n_uav)


def kappa_values(service: ServiceMap, qdq_ol, lam: float) -> np.ndarray:
    """Largest gap ``h^T Qdq_ol h - lam^2 sigma2_budget`` over the UEs each UAV
    serves.

    A UAV serving no UE would otherwise never be sensed and drift away; it is
    held to the tightest feasible budget in the fleet along its worst
    direction (largest eigenvalue of ``Qdq_ol``).
    """
    qdq_ol = np.asarray(qdq_ol, float)
    Q = qdq_ol[service.serving]
    proj = np.einsum("mni,mnij,mnj->mn", service.h, Q, service.h)
    gap = proj - lam**2 * service.sigma2_budget[:, None]
    kappa = np.full(service.n_uav, -np.inf)
    np.maximum.at(kappa, service.serving.ravel(), gap.ravel())
    idle = service.idle
    ok = service.feasible
    if idle.size and ok.any():
        worst = np.linalg.eigvalsh(qdq_ol[idle])[:, -1]
        kappa[idle] = worst - lam**2 * service.sigma2_budget[ok].min()
    return kappa


def decide(cfg: SchedulerConfig, slot: int, qdq_ol, service: ServiceMap, gamma, data_bits: int) -> SchedulingDecision:
    """Scheduling vector and per-link blocklengths for one slot.

    ``qdq_ol`` (N_A, 2, 2) are the next-slot position second moments if
    each UAV stays open-loop; ``gamma`` (N_A, 3) the current SNR of each of a
    UAV's three sensing uplinks.
    """
    n = service.n_uav
    gamma = np.asarray(gamma, float)
    warnings: list[str] = []
    kappa = np.full(n, np.nan)
    if cfg.scheme is Scheme.PROPOSED:
        kappa = kappa_values(service, qdq_ol, cfg.lam)
        phi = kappa >= 0
    elif cfg.scheme is Scheme.CONTINUOUS:
        phi = np.ones(n, bool)
    elif cfg.scheme is Scheme.PERIODIC:
        phi = np.array([(slot - cfg.offset(j)) % cfg.period == 0 for j in range(n)])
    else:
        phi = np.zeros(n, bool)

    if cfg.scheme is not Scheme.NONE and not service.feasible.all():
        for m in np.flatnonzero(~service.feasible):
            forced = service.serving[m]
            phi[forced] = True
            warnings.append(f"UE {m}: MSE requirement below measurement floor; forcing sensing of UAVs {forced.tolist()}")
        for w in warnings:
            log.debug(w)

    theta = np.zeros((n, gamma.shape[1]), np.int64)
    if phi.any():
        theta[phi] = min_blocklength_symbols(cfg.link_target, gamma[phi], data_bits)
    return SchedulingDecision(phi=phi.astype(np.int8), theta=theta, kappa=kappa,
                              total_symbols=int(theta.sum()), warnings=warnings)


def check_proposition1(geom: UeGeometry, p_cl, qdq_cl, qdq_ol, sigma2_budget: float) -> tuple[bool, bool]:
    """Evaluate the per-UAV budget condition and the UE-level QoS condition.

    Returns ``(per_uav_ok, global_ok)``: every serving UAV's expected projected
    variance is within ``sigma2_budget``; and ``tr(S D S^T)`` is within
    ``sigma2_budget * tr(P)``.
    """
    d = expected_uncertainty_diag(geom, p_cl, qdq_cl, qdq_ol)
    per_uav = bool(np.all(d <= sigma2_budget))
    lhs = float(np.trace(geom.S_mat @ np.diag(d) @ geom.S_mat.T))
    thr = sigma2_budget * float(np.trace(geom.P_mat))
    return per_uav, bool(lhs <= thr * (1 + 1e-12))

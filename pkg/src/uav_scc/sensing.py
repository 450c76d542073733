"""TWR ranging, agent-UAV position CRLB and sensed-state assembly."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import block_diag

from .dynamics import STATE_DIM, psd_factor
from .errors import DegenerateGeometryError, EstimationError, InvalidParameterError

C_LIGHT = 299_792_458.0


@dataclass(frozen=True)
class TwrClockModel:
    """Clock-drift error model of a two-way ranging exchange.

    ``sigma_delta`` is the standard deviation of each node's relative clock
    drift; ``epsilon_std`` (seconds) is the per-node internal timing noise.
    """

    tau_D: float = 1e-3
    sigma_delta: float = math.sqrt(2.0) / (C_LIGHT * 1e-3)
    c: float = C_LIGHT
    epsilon_std: float = 0.0

    def __post_init__(self):
        if not self.tau_D > 0:
            raise InvalidParameterError("response delay tau_D must be > 0")
        if self.sigma_delta < 0 or self.epsilon_std < 0:
            raise InvalidParameterError("clock noise parameters must be >= 0")

    @property
    def sigma2_d(self) -> float:
        """Range-error variance implied by the drift and internal noise."""
        drift = (self.c * self.tau_D) ** 2 * 2.0 * self.sigma_delta**2 / 4.0
        internal = self.c**2 * 2.0 * self.epsilon_std**2 / 4.0
        return drift + internal

    @classmethod
    def for_range_std(cls, sigma_d: float, tau_D: float = 1e-3) -> "TwrClockModel":
        """Clock model whose drift-only range error has std ``sigma_d``."""
        return cls(tau_D=tau_D, sigma_delta=math.sqrt(2.0) * sigma_d / (C_LIGHT * tau_D))


def twr_range(true_dist, clock: TwrClockModel, rng: np.random.Generator, drifts=None):
    """Measured TWR distance ``d + c*tau_D*(delta_i - delta_j)/2`` (+ internal noise).

    ``true_dist`` may be an array; one independent exchange per element.
    ``drifts`` optionally forces ``(delta_i, delta_j)`` instead of sampling.
    """
    d = np.asarray(true_dist, float)
    if np.any(d < 0):
        raise InvalidParameterError("distances must be non-negative")
    if drifts is None:
        delta_i = rng.normal(0.0, clock.sigma_delta, size=d.shape)
        delta_j = rng.normal(0.0, clock.sigma_delta, size=d.shape)
    else:
        delta_i, delta_j = (np.asarray(v, float) for v in drifts)
    out = d + clock.c * clock.tau_D * (delta_i - delta_j) / 2.0
    if clock.epsilon_std > 0:
        eps = rng.normal(0.0, clock.epsilon_std, size=(2,) + d.shape)
        out = out + clock.c * (eps[0] + eps[1]) / 2.0
    return out if out.ndim else float(out)


def gaussian_range(true_dist, sigma2_d: float, rng: np.random.Generator):
    """Shortcut range model: ``d + n`` with ``n ~ N(0, sigma2_d)``."""
    d = np.asarray(true_dist, float)
    out = d + math.sqrt(sigma2_d) * rng.standard_normal(d.shape)
    return out if out.ndim else float(out)


def jacobian_uav(hp, beacons, h_v: float) -> np.ndarray:
    """Range Jacobian of an agent UAV at ``hp`` w.r.t. its horizontal position.

    Beacons fly at the same altitude, so the 3-D distance equals the
    horizontal one; ``h_v`` is accepted for symmetry with the UE geometry.
    """
    hp = np.asarray(hp, float)
    b = np.atleast_2d(np.asarray(beacons, float))
    diff = hp[None, :] - b
    dist = np.linalg.norm(diff, axis=1)
    if np.any(dist <= 1e-9):
        raise DegenerateGeometryError("a beacon coincides with the hovering point")
    return diff / dist[:, None]


def crlb_uav(H, sigma2_d: float) -> np.ndarray:
    """``sigma_d^2 (H^T H)^{-1}``, the position-estimate covariance bound."""
    H = np.asarray(H, float)
    G = H.T @ H
    if np.linalg.cond(G) > 1e12:
        raise DegenerateGeometryError("singular H^T H (collinear bearings)")
    out = sigma2_d * np.linalg.inv(G)
    return 0.5 * (out + out.T)


@dataclass(frozen=True, eq=False)
class SensingModel:
    sigma2_d: float = 1.0
    Rv: np.ndarray = field(default_factory=lambda: 0.5**2 * np.eye(2))
    Ra: np.ndarray = field(default_factory=lambda: 0.1**2 * np.eye(2))

    def __post_init__(self):
        if self.sigma2_d < 0:
            raise InvalidParameterError("sigma2_d must be >= 0")
        for name in ("Rv", "Ra"):
            R = np.asarray(getattr(self, name), float)
            if R.shape != (2, 2) or not np.allclose(R, R.T):
                raise InvalidParameterError(f"{name} must be a symmetric 2x2 matrix")
            psd_factor(R)
            object.__setattr__(self, name, R)

    def measurement_covariance(self, R_dq) -> np.ndarray:
        """Block-diagonal ``R_eta = blkdiag(R_dq, Rv, Ra)``."""
        return block_diag(np.asarray(R_dq, float), self.Rv, self.Ra)

    def covariance_at(self, hp, beacons, h_v: float) -> np.ndarray:
        """``R_eta`` with the position block evaluated at the hovering point."""
        return self.measurement_covariance(crlb_uav(jacobian_uav(hp, beacons, h_v), self.sigma2_d))


@dataclass(frozen=True, eq=False)
class SensingResult:
    x_hat: np.ndarray
    R_eta: np.ndarray
    slot: int = 0


def ml_position(ranges, beacons, h_v: float, init, tol: float = 1e-6, max_iter: int = 20) -> np.ndarray:
    """Gauss-Newton ML fit of a horizontal position to beacon ranges."""
    b = np.atleast_2d(np.asarray(beacons, float))
    r = np.asarray(ranges, float)
    q = np.asarray(init, float).copy()
    for _ in range(max_iter):
        diff = q[None, :] - b
        dist = np.linalg.norm(diff, axis=1)
        if np.any(dist <= 1e-9):
            raise DegenerateGeometryError("estimate coincides with a beacon")
        H = diff / dist[:, None]
        delta, *_ = np.linalg.lstsq(H, r - dist, rcond=None)
        q = q + delta
        if not np.all(np.isfinite(q)) or np.linalg.norm(delta) > 1e6:
            raise EstimationError("ML position iteration diverged")
        if np.linalg.norm(delta) < tol:
            break
    return q


def sense_state(true_x, hp, beacons, model: SensingModel, h_v: float, rng: np.random.Generator,
                mode: str = "direct", slot: int = 0, clock: TwrClockModel | None = None) -> SensingResult:
    """Sense one agent UAV: ``x_hat = x + eta`` with ``eta ~ N(0, R_eta)``.

    ``mode="direct"`` draws the position error from the CRLB directly;
    ``mode="ml"`` simulates three beacon ranges and runs the ML fit.
    """
    true_x = np.asarray(true_x, float)
    hp = np.asarray(hp, float)
    R_eta = model.covariance_at(hp, beacons, h_v)
    if mode == "direct":
        eta = psd_factor(R_eta) @ rng.standard_normal(STATE_DIM)
        x_hat = true_x + eta
    elif mode == "ml":
        q = hp + true_x[:2]
        d = np.linalg.norm(q[None, :] - np.atleast_2d(beacons), axis=1)
        if clock is None:
            meas = gaussian_range(d, model.sigma2_d, rng)
        else:
            meas = twr_range(d, clock, rng)
        q_hat = ml_position(meas, beacons, h_v, init=hp)
        rest = block_diag(model.Rv, model.Ra)
        x_hat = np.concatenate([q_hat - hp, true_x[2:] + psd_factor(rest) @ rng.standard_normal(4)])
    else:
        raise InvalidParameterError(f"unknown sensing mode {mode!r}")
    return SensingResult(x_hat=x_hat, R_eta=R_eta, slot=slot)

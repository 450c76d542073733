"""UE positioning against agent-UAV hovering points.

UEs range to their serving UAVs but only know the hovering points, so UAV
position deviations enter the fix as range errors projected on the
UE-UAV unit vectors ``h_j``. To first order the position-error covariance is

    sigma_r^2 P + S diag(h_j^T Qdq_j h_j) S^T,   P = (H^T H)^-1,  S = P H^T.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .control import Mode
from .errors import DegenerateGeometryError, EstimationError, InvalidParameterError


def _unit_rows(p, hps, h_v):
    diff = np.asarray(p, float)[None, :] - np.asarray(hps, float)
    slant = np.sqrt(np.sum(diff**2, axis=1) + h_v**2)
    return diff / slant[:, None], slant


def ue_jacobian(p, serving_hps, h_v: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(H, P, S)`` at UE position ``p`` (UE on the ground)."""
    H, _ = _unit_rows(p, serving_hps, h_v)
    G = H.T @ H
    if np.linalg.cond(G) > 1e12:
        raise DegenerateGeometryError("singular H^T H for this UE")
    P = np.linalg.inv(G)
    P = 0.5 * (P + P.T)
    return H, P, P @ H.T


@dataclass(frozen=True, eq=False)
class UeGeometry:
    p: np.ndarray
    serving_hps: np.ndarray
    h_v: float
    H: np.ndarray
    P_mat: np.ndarray
    S_mat: np.ndarray

    @classmethod
    def at(cls, p, serving_hps, h_v: float) -> "UeGeometry":
        serving_hps = np.asarray(serving_hps, float)
        if serving_hps.shape[0] < 3:
            raise InvalidParameterError("a UE needs at least three serving UAVs")
        H, P, S = ue_jacobian(p, serving_hps, h_v)
        return cls(p=np.asarray(p, float), serving_hps=serving_hps, h_v=float(h_v), H=H, P_mat=P, S_mat=S)

    @property
    def n_serving(self) -> int:
        return self.H.shape[0]

    @property
    def weights(self) -> np.ndarray:
        """``||S[:, j]||^2``: trace contribution of unit range variance on link j."""
        return np.sum(self.S_mat**2, axis=0)

    def ranges(self, uav_positions=None) -> np.ndarray:
        """3-D ranges to the given UAV positions (hovering points by default)."""
        q = self.serving_hps if uav_positions is None else np.asarray(uav_positions, float)
        return _unit_rows(self.p, q, self.h_v)[1]


def ils_estimate(meas, serving_hps, h_v: float, init=None, tol: float = 1e-6, max_iter: int = 50,
                 full_output: bool = False):
    """Iterative least-squares (Gauss-Newton) UE fix from ranges to hovering points.

    ``init`` defaults to the centroid of the hovering points. With
    ``full_output`` returns ``(estimate, iterations)``.
    """
    hps = np.asarray(serving_hps, float)
    r_hat = np.asarray(meas, float)
    p = hps.mean(axis=0) if init is None else np.asarray(init, float).copy()
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        H, r_bar = _unit_rows(p, hps, h_v)
        delta, *_ = np.linalg.lstsq(H, r_hat - r_bar, rcond=None)
        step = float(np.linalg.norm(delta))
        if not np.isfinite(step) or step > 1e6:
            raise EstimationError("ILS diverged")
        p = p + delta
        if step < tol:
            break
    return (p, n_iter) if full_output else p


def ils_estimate_batch(meas, serving_hps, h_v: float, init, tol: float = 1e-6, max_iter: int = 50) -> np.ndarray:
    """Vectorised :func:`ils_estimate` over UEs.

    ``meas``: (M, N), ``serving_hps``: (M, N, 2), ``init``: (M, 2).
    """
    hps = np.asarray(serving_hps, float)
    r_hat = np.asarray(meas, float)
    p = np.array(init, float)
    active = np.ones(p.shape[0], bool)
    h2 = h_v * h_v
    for _ in range(max_iter):
        dx = p[:, 0:1] - hps[..., 0]
        dy = p[:, 1:2] - hps[..., 1]
        slant = np.sqrt(dx * dx + dy * dy + h2)
        hx, hy = dx / slant, dy / slant
        resid = r_hat - slant
        # normal equations, 2x2 solved in closed form
        gxx, gxy, gyy = (hx * hx).sum(1), (hx * hy).sum(1), (hy * hy).sum(1)
        bx, by = (hx * resid).sum(1), (hy * resid).sum(1)
        det = gxx * gyy - gxy * gxy
        if np.any(np.abs(det) < 1e-14):
            raise EstimationError("singular normal equations in ILS")
        delta = np.column_stack([(gyy * bx - gxy * by) / det, (gxx * by - gxy * bx) / det])
        delta[~active] = 0.0
        step = np.sqrt((delta * delta).sum(1))
        if not np.all(np.isfinite(step)) or np.any(step > 1e6):
            raise EstimationError("ILS diverged")
        p += delta
        active &= step >= tol
        if not active.any():
            break
    return p


def mse_for_event(geom: UeGeometry, qdq_per_uav, sigma2_r: float) -> float:
    """Trace of the first-order UE error covariance for fixed UAV covariances."""
    Q = np.asarray(qdq_per_uav, float)
    if Q.shape != (geom.n_serving, 2, 2):
        raise InvalidParameterError(f"expected {geom.n_serving} 2x2 covariances, got shape {Q.shape}")
    proj = np.einsum("ni,nij,nj->n", geom.H, Q, geom.H)
    cov = sigma2_r * geom.P_mat + geom.S_mat @ np.diag(proj) @ geom.S_mat.T
    return float(np.trace(cov))


@dataclass(frozen=True)
class SensingEventTable:
    events: list[tuple[Mode, ...]]
    probabilities: np.ndarray

    @classmethod
    def from_cl_probabilities(cls, p_cl) -> "SensingEventTable":
        p_cl = np.asarray(p_cl, float)
        if np.any((p_cl < 0) | (p_cl > 1)):
            raise InvalidParameterError("CL probabilities must lie in [0, 1]")
        events, probs = [], []
        for modes in itertools.product((Mode.CL, Mode.OL), repeat=len(p_cl)):
            pr = 1.0
            for mode, p in zip(modes, p_cl):
                pr *= p if mode is Mode.CL else 1.0 - p
            events.append(modes)
            probs.append(pr)
        return cls(events=events, probabilities=np.array(probs))


@dataclass
class MseBreakdown:
    base: float
    uncertainty: float
    total: float
    per_event: list[tuple[tuple[Mode, ...], float, float]] = field(default_factory=list)


def expected_mse(geom: UeGeometry, p_cl, qdq_cl, qdq_ol, sigma2_r: float) -> MseBreakdown:
    """Expectation of the UE MSE over all 2^N joint CL/OL events."""
    table = SensingEventTable.from_cl_probabilities(p_cl)
    qdq_cl = np.asarray(qdq_cl, float)
    qdq_ol = np.asarray(qdq_ol, float)
    base = sigma2_r * float(np.trace(geom.P_mat))
    per_event, total = [], 0.0
    for modes, prob in zip(table.events, table.probabilities):
        Q = np.stack([qdq_cl[j] if m is Mode.CL else qdq_ol[j] for j, m in enumerate(modes)])
        mse = mse_for_event(geom, Q, sigma2_r)
        per_event.append((modes, mse, float(prob)))
        total += prob * mse
    return MseBreakdown(base=base, uncertainty=total - base, total=total, per_event=per_event)


def expected_uncertainty_diag(geom: UeGeometry, p_cl, qdq_cl, qdq_ol) -> np.ndarray:
    """Diagonal of the expected projected-variance matrix (one entry per UAV)."""
    p_cl = np.asarray(p_cl, float)
    d_cl = np.einsum("ni,nij,nj->n", geom.H, np.asarray(qdq_cl, float), geom.H)
    d_ol = np.einsum("ni,nij,nj->n", geom.H, np.asarray(qdq_ol, float), geom.H)
    return p_cl * d_cl + (1.0 - p_cl) * d_ol

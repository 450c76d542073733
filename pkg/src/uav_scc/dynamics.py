"""Discrete-time LTI model of an agent UAV.

State ordering is ``[dq_x, dq_y, v_x, v_y, a_x, a_y]``: deviation from the
hovering point (m), velocity (m/s) and acceleration (m/s^2). Each axis is a
third-order chain whose acceleration follows the commanded acceleration with
a first-order lag of time constant ``rho``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError, NumericError

STATE_DIM = 6
INPUT_DIM = 2

POS = slice(0, 2)
VEL = slice(2, 4)
ACC = slice(4, 6)


def state_vector(dq=(0.0, 0.0), v=(0.0, 0.0), a=(0.0, 0.0)) -> np.ndarray:
    """Pack position deviation, velocity and acceleration into a 6-vector."""
    x = np.concatenate([np.asarray(dq, float), np.asarray(v, float), np.asarray(a, float)])
    if x.shape != (STATE_DIM,):
        raise InvalidParameterError(f"state components must be 2-vectors, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InvalidParameterError("state vector has non-finite entries")
    return x


@dataclass(frozen=True, eq=False)
class DynamicsModel:
    dt: float
    rho: float
    sigma2_ax: float
    sigma2_ay: float
    A: np.ndarray
    B: np.ndarray
    Qw: np.ndarray

    @property
    def noise_factor(self) -> np.ndarray:
        """Matrix ``L`` with ``L @ L.T == Qw``; cached on first use."""
        try:
            return self.__dict__["_noise_factor"]
        except KeyError:
            L = psd_factor(self.Qw)
            object.__setattr__(self, "_noise_factor", L)
            return L


def lag_coefficients(dt: float, rho: float) -> dict[str, float]:
    """Scalar coefficients of the per-axis discretised lag model."""
    e = math.exp(-dt / rho)
    return {
        "pos_from_acc": rho**2 * e + rho * dt - rho**2,
        "vel_from_acc": rho * (1.0 - e),
        "acc_from_acc": e,
        # Input gain on position keeps dt*(dt - rho), not dt**2/2 - rho*dt.
        "pos_from_u": rho**2 * (1.0 - e) + dt * (dt - rho),
        "vel_from_u": dt + rho * (e - 1.0),
        "acc_from_u": 1.0 - e,
    }


def build_dynamics(dt: float, rho: float, sigma2_ax: float, sigma2_ay: float) -> DynamicsModel:
    if not (dt > 0):
        raise InvalidParameterError(f"slot length dt must be > 0, got {dt}")
    if not (rho > 0):
        raise InvalidParameterError(f"lag time constant rho must be > 0, got {rho}")
    if sigma2_ax < 0 or sigma2_ay < 0:
        raise InvalidParameterError("process noise intensities must be >= 0")

    c = lag_coefficients(dt, rho)
    A = np.zeros((STATE_DIM, STATE_DIM))
    B = np.zeros((STATE_DIM, INPUT_DIM))
    for axis in range(2):
        p, v, a = axis, 2 + axis, 4 + axis
        A[p, p] = 1.0
        A[p, v] = dt
        A[p, a] = c["pos_from_acc"]
        A[v, v] = 1.0
        A[v, a] = c["vel_from_acc"]
        A[a, a] = c["acc_from_acc"]
        B[p, axis] = c["pos_from_u"]
        B[v, axis] = c["vel_from_u"]
        B[a, axis] = c["acc_from_u"]

    Qw = np.zeros((STATE_DIM, STATE_DIM))
    for axis, s2 in enumerate((sigma2_ax, sigma2_ay)):
        p, v, a = axis, 2 + axis, 4 + axis
        Qw[p, p] = dt**3 * s2 / 3.0
        Qw[p, v] = Qw[v, p] = dt**2 * s2 / 2.0
        Qw[v, v] = dt * s2
        Qw[a, a] = s2
    return DynamicsModel(dt=dt, rho=rho, sigma2_ax=sigma2_ax, sigma2_ay=sigma2_ay, A=A, B=B, Qw=Qw)


def step(model: DynamicsModel, x, u, w) -> np.ndarray:
    """One slot of ``x' = A x + B u + w``."""
    x = np.asarray(x, float)
    u = np.asarray(u, float)
    w = np.asarray(w, float)
    with np.errstate(invalid="ignore", over="ignore"):
        out = model.A @ x + model.B @ u + w
    if not np.all(np.isfinite(out)):
        raise NumericError("non-finite state after dynamics step")
    return out


def psd_factor(Q: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Symmetric square-root style factor ``L`` with ``L L^T = Q``.

    Uses an eigendecomposition so rank-deficient covariances are handled;
    eigenvalues below ``-tol * max(1, ||Q||)`` are rejected.
    """
    Q = np.asarray(Q, float)
    Qs = 0.5 * (Q + Q.T)
    if not np.allclose(Qs, Q, atol=1e-12, rtol=1e-9):
        raise NumericError("covariance matrix is not symmetric")
    vals, vecs = np.linalg.eigh(Qs)
    scale = max(1.0, float(np.max(np.abs(vals)))) if vals.size else 1.0
    if vals.size and vals.min() < -tol * scale:
        raise NumericError(f"covariance matrix is not PSD (min eigenvalue {vals.min():.3e})")
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


def sample_process_noise(model: DynamicsModel, rng: np.random.Generator) -> np.ndarray:
    return model.noise_factor @ rng.standard_normal(STATE_DIM)

"""LQR synthesis, open-loop prediction and mode-conditioned second moments.

A UAV is in closed-loop (CL) mode in a slot when fresh sensing data reached
the control centre, otherwise in open-loop (OL) mode, where the control
input is computed from the state predicted from the last estimate. ``dtc``
counts slots since that last estimate.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np

from .dynamics import POS, STATE_DIM, DynamicsModel
from .errors import InvalidParameterError, SynthesisError

PREDICTION_POWER_CAP = 64


class Mode(str, enum.Enum):
    CL = "CL"
    OL = "OL"


def default_lqr_weights() -> tuple[np.ndarray, np.ndarray]:
    return np.diag([1.0, 1.0, 1.0, 1.0, 0.1, 0.1]), np.eye(2)


def solve_riccati(A, B, Q, R, max_iter: int = 10_000, tol: float = 1e-10) -> np.ndarray:
    """Fixed point of the discrete Riccati recursion, by plain iteration."""
    P = np.array(Q, float)
    for _ in range(max_iter):
        BtP = B.T @ P
        gain = np.linalg.solve(R + BtP @ B, BtP @ A)
        P_next = Q + A.T @ P @ A - A.T @ P @ B @ gain
        P_next = 0.5 * (P_next + P_next.T)
        change = np.linalg.norm(P_next - P) / max(1.0, np.linalg.norm(P_next))
        P = P_next
        if change < tol:
            return P
    raise SynthesisError(f"Riccati iteration did not converge in {max_iter} steps")


def lqr_gain(model: DynamicsModel, Qlqr=None, Rlqr=None) -> np.ndarray:
    """Feedback gain ``K`` (2x6) for ``u = K x``.

    ``K = -(R + B^T P B)^{-1} B^T P A`` with ``P`` the Riccati fixed point.
    """
    Q0, R0 = default_lqr_weights()
    Q = Q0 if Qlqr is None else np.asarray(Qlqr, float)
    R = R0 if Rlqr is None else np.asarray(Rlqr, float)
    A, B = model.A, model.B
    P = solve_riccati(A, B, Q, R)
    K = -np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
    if spectral_radius(A + B @ K) >= 1.0:
        raise SynthesisError("synthesised gain does not stabilise (A, B)")
    return K


def spectral_radius(M) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(M))))


@dataclass(frozen=True, eq=False)
class ControllerState:
    """Per-UAV controller memory.

    ``dtc == 0`` only marks the initial condition where the state is known
    exactly (``last_Reta`` zero); any sensing sets it to 1.
    """

    K: np.ndarray
    dtc: int
    last_xhat: np.ndarray
    last_Reta: np.ndarray

    def __post_init__(self):
        if self.dtc < 0:
            raise InvalidParameterError("dtc must be >= 0")

    @classmethod
    def at_rest(cls, K) -> "ControllerState":
        """UAV holding exactly at its hovering point, state known."""
        return cls(K=np.asarray(K, float), dtc=0, last_xhat=np.zeros(STATE_DIM),
                   last_Reta=np.zeros((STATE_DIM, STATE_DIM)))


@dataclass(frozen=True, eq=False)
class ModeCovariances:
    """Second moments (about the hovering point) of next-slot state per mode."""

    Qx_cl: np.ndarray
    Qx_ol: np.ndarray

    @property
    def Qdq_cl(self) -> np.ndarray:
        return self.Qx_cl[POS, POS]

    @property
    def Qdq_ol(self) -> np.ndarray:
        return self.Qx_ol[POS, POS]


def predict_state(ctrl: ControllerState, model: DynamicsModel) -> np.ndarray:
    """``(A + B K)^dtc @ last_xhat``, with the power held past the cap."""
    Ac = model.A + model.B @ ctrl.K
    x = np.array(ctrl.last_xhat, float)
    for _ in range(min(ctrl.dtc, PREDICTION_POWER_CAP)):
        x = Ac @ x
    return x


def control_input(ctrl: ControllerState, model: DynamicsModel, mode: Mode, xhat_now=None) -> np.ndarray:
    mode = Mode(mode)
    if mode is Mode.CL:
        if xhat_now is None:
            raise InvalidParameterError("closed-loop control requires the current estimate")
        return ctrl.K @ np.asarray(xhat_now, float)
    return ctrl.K @ predict_state(ctrl, model)


def update_counter(ctrl: ControllerState, mode: Mode, xhat=None, R_eta=None) -> ControllerState:
    """Slot-end bookkeeping: CL resets ``dtc`` to 1 and stores the estimate."""
    mode = Mode(mode)
    if mode is Mode.CL:
        if xhat is None or R_eta is None:
            raise InvalidParameterError("closed-loop update needs the new estimate and its covariance")
        return replace(ctrl, dtc=1, last_xhat=np.asarray(xhat, float), last_Reta=np.asarray(R_eta, float))
    return replace(ctrl, dtc=ctrl.dtc + 1)


def _sym(M):
    return 0.5 * (M + M.T)


def estimation_error_map(A, BK, Ac, n: int) -> np.ndarray:
    """``sum_{k<n} A^k BK Ac^(n-k-1) - Ac^n``: how the old estimation error
    enters the current state. Evaluated term by term."""
    total = np.zeros_like(A)
    for k in range(n):
        total += np.linalg.matrix_power(A, k) @ BK @ np.linalg.matrix_power(Ac, n - k - 1)
    return total - np.linalg.matrix_power(Ac, n)


def predict_mode_covariances(ctrl: ControllerState, model: DynamicsModel, R_eta) -> ModeCovariances:
    """Next-slot second moments for staying OL or going CL this slot.

    ``ctrl.last_Reta`` is the covariance of the estimate the prediction is
    based on; ``R_eta`` the covariance of a fresh estimate taken now.
    """
    A, B, Qw = model.A, model.B, model.Qw
    n = ctrl.dtc
    BK = B @ ctrl.K
    Ac = A + BK
    xbar = predict_state(ctrl, model)
    m = Ac @ xbar
    mean_term = np.outer(m, m)
    C = estimation_error_map(A, BK, Ac, n)
    R_old = np.asarray(ctrl.last_Reta, float)
    R_now = np.asarray(R_eta, float)

    AcC = Ac @ C
    Qcl = mean_term + AcC @ R_old @ AcC.T + BK @ R_now @ BK.T + Qw
    for k in range(n):
        T = Ac @ np.linalg.matrix_power(A, k)
        Qcl = Qcl + T @ Qw @ T.T

    AC = A @ C
    Qol = mean_term + AC @ R_old @ AC.T
    for k in range(n + 1):
        T = np.linalg.matrix_power(A, k)
        Qol = Qol + T @ Qw @ T.T
    return ModeCovariances(Qx_cl=_sym(Qcl), Qx_ol=_sym(Qol))


class CovariancePredictor:
    """Table-driven equivalent of :func:`predict_mode_covariances`.

    Uses ``C = -A^n`` (telescoped form of the estimation-error map), so
    everything except the mean term is a per-``dtc`` constant. Tables are
    grown on demand. Only the 2x2 position blocks are kept.
    """

    def __init__(self, model: DynamicsModel, K, R_old, R_now):
        self.A = model.A
        self.Qw = model.Qw
        self.BK = model.B @ np.asarray(K, float)
        self.Ac = self.A + self.BK
        self.R_old = np.asarray(R_old, float)
        self.R_now = np.asarray(R_now, float)
        self._fixed_cl = self.BK @ self.R_now @ self.BK.T + self.Qw
        # Rolling state for table growth.
        self._An = np.eye(STATE_DIM)         # A^n
        self._sum_w = np.zeros((STATE_DIM, STATE_DIM))  # sum_{k<n} A^k Qw A^kT
        self._mean_maps: list[np.ndarray] = []  # rows POS of Ac^(min(n,cap)+1)
        self._cl: list[np.ndarray] = []
        self._ol: list[np.ndarray] = []
        self._acpow = [np.eye(STATE_DIM)]
        for _ in range(PREDICTION_POWER_CAP + 1):
            self._acpow.append(self.Ac @ self._acpow[-1])
        self._grow(PREDICTION_POWER_CAP + 1)

    def _grow(self, upto: int):
        A, Ac, Qw = self.A, self.Ac, self.Qw
        while len(self._cl) < upto:
            n = len(self._cl)
            An = self._An
            An1 = A @ An
            cl = (Ac @ An) @ self.R_old @ (Ac @ An).T + Ac @ self._sum_w @ Ac.T + self._fixed_cl
            sum_w_next = self._sum_w + An @ Qw @ An.T
            ol = An1 @ self.R_old @ An1.T + sum_w_next
            self._cl.append(_sym(cl)[POS, POS].copy())
            self._ol.append(_sym(ol)[POS, POS].copy())
            self._mean_maps.append(self._acpow[min(n, PREDICTION_POWER_CAP) + 1][POS].copy())
            self._An = An1
            self._sum_w = sum_w_next

    def tables(self, upto: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Stacked ``(mean_map, Qdq_cl_const, Qdq_ol_const)`` for ``dtc < upto``."""
        self._grow(upto)
        return (np.stack(self._mean_maps[:upto]), np.stack(self._cl[:upto]), np.stack(self._ol[:upto]))

    def qdq(self, dtc: int, last_xhat) -> tuple[np.ndarray, np.ndarray]:
        self._grow(dtc + 1)
        m = self._mean_maps[dtc] @ np.asarray(last_xhat, float)
        mm = np.outer(m, m)
        return mm + self._cl[dtc], mm + self._ol[dtc]

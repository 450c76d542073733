"""Rayleigh block-fading uplinks and finite-blocklength transmission.

Success probability of a ``theta``-symbol packet carrying ``D`` bits at SNR
``gamma`` uses the normal approximation

    P = 1 - Q( ln2 * sqrt(theta / V) * (log2(1 + gamma) - D / theta) ),
    V = 1 - (1 + gamma)^-2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import InvalidParameterError

LN2 = math.log(2.0)
SPEED_OF_LIGHT = 299_792_458.0


def db_to_linear(db):
    return 10.0 ** (np.asarray(db, float) / 10.0)


def free_space_gain(distance_m: float, carrier_hz: float) -> float:
    """Friis free-space power gain ``(c / (4 pi d f))^2`` (linear)."""
    return (SPEED_OF_LIGHT / (4.0 * math.pi * distance_m * carrier_hz)) ** 2


DEFAULT_PATH_GAIN = free_space_gain(1000.0, 2e9)


@dataclass(frozen=True)
class LinkModel:
    p_t_dbm: float = 30.0
    n0_dbm: float = -107.0
    mean_path_gain: float = DEFAULT_PATH_GAIN
    data_bits: int = 100
    blocked: bool = False

    def __post_init__(self):
        if self.data_bits < 1:
            raise InvalidParameterError("payload must be at least one bit")
        if self.mean_path_gain < 0:
            raise InvalidParameterError("mean path gain must be >= 0")

    @property
    def snr_scale(self) -> float:
        """Mean SNR ``(P_t / N_0) * mean_path_gain`` (linear)."""
        return float(db_to_linear(self.p_t_dbm - self.n0_dbm)) * self.mean_path_gain


def sample_snr(link: LinkModel, rng: np.random.Generator, size=None):
    """Rayleigh block fading: ``gamma = snr_scale * g`` with ``g ~ Exp(1)``."""
    return link.snr_scale * rng.exponential(1.0, size=size)


def q_function(x):
    """Standard normal tail probability."""
    return ndtr(-np.asarray(x, float))


def q_inverse(p):
    p = np.asarray(p, float)
    if np.any((p <= 0) | (p >= 1)):
        raise InvalidParameterError("Q^-1 requires 0 < p < 1")
    return -ndtri(p)


def dispersion(gamma):
    gamma = np.asarray(gamma, float)
    return 1.0 - (1.0 + gamma) ** -2


def success_probability(theta, gamma, data_bits: float):
    """Decoding success probability of a ``theta``-symbol packet (vectorised).

    Zero SNR carries no information and returns 0.
    """
    theta = np.asarray(theta, float)
    gamma = np.asarray(gamma, float)
    theta, gamma = np.broadcast_arrays(theta, gamma)
    out = np.zeros(theta.shape)
    ok = (gamma > 0) & (theta > 0)
    if np.any(ok):
        t, g = theta[ok], gamma[ok]
        f = LN2 * np.sqrt(t / dispersion(g)) * (np.log2(1.0 + g) - data_bits / t)
        out[ok] = 1.0 - q_function(f)
    return out if out.ndim else float(out)


def min_blocklength(p_target: float, gamma, data_bits: float):
    """Real-valued minimum blocklength reaching ``p_target`` (>= 0.5).

    Positive root in ``sqrt(theta)`` of ``f(theta, gamma) = Q^-1(1 - p)``.
    """
    if not 0.5 <= p_target < 1.0:
        raise InvalidParameterError("target success probability must lie in [0.5, 1)")
    gamma = np.asarray(gamma, float)
    if np.any(gamma <= 0):
        raise InvalidParameterError("blocklength is undefined at zero SNR")
    q = 0.0 if p_target == 0.5 else float(q_inverse(1.0 - p_target))
    cap = np.log2(1.0 + gamma)
    b = q * np.sqrt(dispersion(gamma)) / LN2
    root = (b + np.sqrt(b * b + 4.0 * cap * data_bits)) / (2.0 * cap)
    out = root * root
    return out if out.ndim else float(out)


def min_blocklength_closed_form(p_target: float, gamma, data_bits: float):
    """The rationalised closed form, kept as an independent check of
    :func:`min_blocklength`."""
    if not 0.5 <= p_target < 1.0:
        raise InvalidParameterError("target success probability must lie in [0.5, 1)")
    gamma = np.asarray(gamma, float)
    q = 0.0 if p_target == 0.5 else float(q_inverse(1.0 - p_target))
    V = dispersion(gamma)
    D = float(data_bits)
    c = np.log2(1.0 + gamma)
    z = (q / LN2) ** 2
    denom = V / D * z + 2.0 * c - np.sqrt(V**2 / D**2 * z**2 + 4.0 * c * (V / D) * z)
    return 2.0 * D / denom


def min_blocklength_symbols(p_target: float, gamma, data_bits: float):
    """Integer symbol count: ceiling of the real blocklength, bumped by one
    where rounding noise would leave the target unmet."""
    theta = np.ceil(np.asarray(min_blocklength(p_target, gamma, data_bits)) - 1e-9)
    short = success_probability(theta, gamma, data_bits) < p_target
    theta = np.where(short, theta + 1, theta).astype(np.int64)
    return theta if theta.ndim else int(theta)


def transmit(theta, gamma, data_bits: float, rng: np.random.Generator, blocked=False):
    """Bernoulli transmission outcome(s); blocked links always fail."""
    p = np.asarray(success_probability(theta, gamma, data_bits))
    ok = rng.random(p.shape) < p
    ok = ok & ~np.asarray(blocked, bool)
    return ok if ok.ndim else bool(ok)

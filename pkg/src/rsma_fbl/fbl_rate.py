"""Normal-approximation rates for finite blocklength transmission.

All rates are in bit/s/Hz. The achievable rate of a stream received at
SINR ``gamma`` with blocklength ``l`` and block error rate ``eps`` is::

    log2(1 + gamma) - log2(e) * sqrt(V(gamma) / l) * Qinv(eps),
    V(gamma) = 1 - (1 + gamma)^-2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .model import ChannelSet, DomainError, Precoders

LOG2E = math.log2(math.e)
_SQRT2 = math.sqrt(2.0)


class PowerViolation(ValueError):
    pass


def q_function(x: float) -> float:
    """Gaussian tail probability ``Q(x) = P[N(0,1) > x]``."""
    return 0.5 * math.erfc(x / _SQRT2)


def q_inverse(eps: float) -> float:
    """Inverse of :func:`q_function` on ``(0, 0.5)``.

    A bracket is grown until it contains the root, bisected down to a small
    interval and then polished with Newton steps on ``log Q`` which keeps the
    iteration well conditioned deep in the tail.
    """
    if not 0.0 < eps < 0.5:
        raise DomainError(f"eps must lie in (0, 0.5), got {eps}")
    lo, hi = 0.0, 1.0
    while q_function(hi) > eps:
        lo, hi = hi, 2.0 * hi
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        if q_function(mid) > eps:
            lo = mid
        else:
            hi = mid
    x = 0.5 * (lo + hi)
    log_eps = math.log(eps)
    for _ in range(20):
        q = q_function(x)
        pdf = math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
        # d/dx log Q(x) = -pdf / Q
        step = (math.log(q) - log_eps) / (pdf / q)
        x += step
        if abs(step) <= 1e-15 * max(1.0, abs(x)):
            break
    return x


@dataclass(frozen=True)
class FblParams:
    """Blocklength ``l``, BLER ``eps`` and the penalty constant ``D = Qinv(eps)/sqrt(l) * log2(e)``.

    ``blocklength=math.inf`` gives ``D = 0`` (Shannon rates).
    """

    blocklength: float
    bler: float
    d_const: float = field(init=False)

    def __post_init__(self):
        if not self.blocklength > 0:
            raise DomainError(f"blocklength must be positive, got {self.blocklength}")
        qinv = q_inverse(self.bler)
        d = 0.0 if math.isinf(self.blocklength) else qinv / math.sqrt(self.blocklength) * LOG2E
        object.__setattr__(self, "d_const", d)

    @classmethod
    def infinite(cls, bler: float = 1e-5) -> "FblParams":
        return cls(math.inf, bler)


def _out(x):
    return float(x) if np.ndim(x) == 0 else x


def dispersion(gamma):
    """Gaussian-codebook channel dispersion ``1 - (1 + gamma)^-2``."""
    g = np.asarray(gamma, dtype=float)
    return _out(1.0 - (1.0 + g) ** -2)


def dispersion_penalty(gamma, params: FblParams):
    return _out(params.d_const * np.sqrt(dispersion(gamma)))


def fbl_rate(gamma, params: FblParams):
    """Rate of one stream; can be negative at low SINR (no clamping here)."""
    g = np.asarray(gamma, dtype=float)
    return _out(np.log2(1.0 + g) - dispersion_penalty(g, params))


def _check_dims(channels: ChannelSet, precoders: Precoders, user: int):
    if precoders.matrix.shape != (channels.num_tx_antennas, channels.num_users + 1):
        raise DomainError(
            f"precoders {precoders.matrix.shape} do not match channels "
            f"({channels.num_tx_antennas}, {channels.num_users + 1})"
        )
    if not 0 <= user < channels.num_users:
        raise IndexError(f"user index {user} out of range for K={channels.num_users}")


def sinr_common(channels: ChannelSet, precoders: Precoders, user: int) -> float:
    _check_dims(channels, precoders, user)
    g = channels.gains(precoders)[user]
    return float(g[0] / (g[1:].sum() + 1.0))


def sinr_private(channels: ChannelSet, precoders: Precoders, user: int) -> float:
    _check_dims(channels, precoders, user)
    g = channels.gains(precoders)[user]
    own = g[user + 1]
    return float(own / (g[1:].sum() - own + 1.0))


def all_sinrs(channels: ChannelSet, precoders: Precoders) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised common and private SINRs for every user."""
    _check_dims(channels, precoders, 0)
    g = channels.gains(precoders)
    priv_total = g[:, 1:].sum(axis=1)
    own = np.diag(g[:, 1:])
    return g[:, 0] / (priv_total + 1.0), own / (priv_total - own + 1.0)


@dataclass(frozen=True)
class RateBreakdown:
    common_rates: np.ndarray
    private_rates: np.ndarray
    common_rate_bound: float
    common_split: np.ndarray
    total_rates: np.ndarray
    sum_rate: float
    common_sinrs: np.ndarray
    private_sinrs: np.ndarray
    split_violation: float

    @property
    def split_ok(self) -> bool:
        return self.split_violation <= 1e-6


def evaluate_solution(
    channels: ChannelSet,
    precoders: Precoders,
    common_split: Sequence[float],
    params: FblParams,
    total_power: float | None = None,
    power_tol: float = 1e-6,
) -> RateBreakdown:
    """Exact FBL rates of a precoder/common-split pair, clamped at zero for reporting.

    ``split_violation`` is how far ``sum(C)`` exceeds ``min_k R_{c,k}``.
    """
    c = np.asarray(common_split, dtype=float)
    if c.shape != (channels.num_users,):
        raise DomainError(f"common split must have {channels.num_users} entries, got {c.shape}")
    if total_power is not None and precoders.total_power > total_power + power_tol:
        excess = precoders.total_power - total_power
        raise PowerViolation(f"precoder power {precoders.total_power:.9g} exceeds budget by {excess:.3g}")
    gc, gp = all_sinrs(channels, precoders)
    rc = np.maximum(fbl_rate(gc, params), 0.0)
    rp = np.maximum(fbl_rate(gp, params), 0.0)
    bound = float(rc.min())
    total = c + rp
    return RateBreakdown(
        common_rates=rc,
        private_rates=rp,
        common_rate_bound=bound,
        common_split=c,
        total_rates=total,
        sum_rate=float(total.sum()),
        common_sinrs=gc,
        private_sinrs=gp,
        split_violation=max(0.0, float(c.sum()) - bound),
    )

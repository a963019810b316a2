"""Channel sets, power budgets and precoders for the MISO downlink.

Noise variance is fixed to one everywhere, so the transmit power budget
is numerically equal to the linear SNR.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np


class DomainError(ValueError):
    """Raised when an argument lies outside the domain of an operation."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ChannelSet:
    """Per-user channel vectors ``h_k`` stacked as columns of an ``(N_t, K)`` matrix."""

    matrix: np.ndarray

    def __post_init__(self):
        h = np.array(self.matrix, dtype=complex)
        if h.ndim != 2 or h.shape[0] < 1 or h.shape[1] < 1:
            raise DomainError(f"channel matrix must be (N_t, K), got shape {h.shape}")
        norms = np.linalg.norm(h, axis=0)
        if np.any(norms == 0):
            bad = [int(k) for k in np.flatnonzero(norms == 0)]
            raise DomainError(f"all-zero channel vector for user(s) {bad}")
        object.__setattr__(self, "matrix", _frozen(h))

    @classmethod
    def from_vectors(cls, vectors: Sequence[Sequence[complex]]) -> "ChannelSet":
        lengths = {len(v) for v in vectors}
        if len(lengths) != 1:
            raise DomainError(f"channel vectors have unequal lengths {sorted(lengths)}")
        return cls(np.column_stack([np.asarray(v, dtype=complex) for v in vectors]))

    @property
    def num_tx_antennas(self) -> int:
        return self.matrix.shape[0]

    @property
    def num_users(self) -> int:
        return self.matrix.shape[1]

    @property
    def channels(self) -> list[np.ndarray]:
        return [self.matrix[:, k] for k in range(self.num_users)]

    def __getitem__(self, k: int) -> np.ndarray:
        return self.matrix[:, k]

    def gains(self, precoders: "Precoders") -> np.ndarray:
        """Return ``|h_k^H p_s|^2`` as a ``(K, K+1)`` array; column 0 is the common stream."""
        return np.abs(self.matrix.conj().T @ precoders.matrix) ** 2

    def rotated(self, phase: float) -> "ChannelSet":
        return ChannelSet(self.matrix * np.exp(1j * phase))


@dataclass(frozen=True)
class PowerBudget:
    total_power: float
    snr_db: float | None = None

    def __post_init__(self):
        if not (self.total_power > 0 and math.isfinite(self.total_power)):
            raise DomainError(f"total power must be positive and finite, got {self.total_power}")

    @classmethod
    def from_snr_db(cls, snr_db: float) -> "PowerBudget":
        return cls(snr_db_to_power(snr_db), float(snr_db))


@dataclass(frozen=True)
class Precoders:
    """Precoding matrix ``P = [p_c, p_1, ..., p_K]`` of shape ``(N_t, K+1)``."""

    matrix: np.ndarray

    def __post_init__(self):
        p = np.array(self.matrix, dtype=complex)
        if p.ndim != 2 or p.shape[1] < 2:
            raise DomainError(f"precoder matrix must be (N_t, K+1), got shape {p.shape}")
        object.__setattr__(self, "matrix", _frozen(p))

    @classmethod
    def from_streams(cls, common, private: Sequence) -> "Precoders":
        cols = [np.asarray(common, dtype=complex)] + [np.asarray(p, dtype=complex) for p in private]
        return cls(np.column_stack(cols))

    @classmethod
    def zeros(cls, num_tx: int, num_users: int) -> "Precoders":
        return cls(np.zeros((num_tx, num_users + 1), dtype=complex))

    @property
    def common(self) -> np.ndarray:
        return self.matrix[:, 0]

    @property
    def private(self) -> list[np.ndarray]:
        return [self.matrix[:, k] for k in range(1, self.matrix.shape[1])]

    @property
    def num_users(self) -> int:
        return self.matrix.shape[1] - 1

    @property
    def common_power(self) -> float:
        return float(np.vdot(self.common, self.common).real)

    @property
    def private_powers(self) -> np.ndarray:
        return np.sum(np.abs(self.matrix[:, 1:]) ** 2, axis=0)

    @property
    def total_power(self) -> float:
        """``tr(P P^H)``."""
        return float(np.sum(np.abs(self.matrix) ** 2))


def structured_channels_underloaded(theta: float, gamma: float) -> ChannelSet:
    """Two-user, four-antenna channels with user-2 at angle ``theta`` and strength ``gamma``.

    ``h_1 = [1, 1, 1, 1]^H`` and ``h_2 = gamma [1, e^{j theta}, e^{j2theta}, e^{j3theta}]^H``.
    """
    if not 0.0 <= theta <= math.pi / 2 + 1e-12:
        raise DomainError(f"theta must lie in [0, pi/2], got {theta}")
    if gamma <= 0:
        raise DomainError(f"gamma must be positive, got {gamma}")
    n = np.arange(4)
    h1 = np.ones(4, dtype=complex)
    # ^H conjugates the listed row entries
    h2 = gamma * np.conj(np.exp(1j * theta * n))
    return ChannelSet(np.column_stack([h1, h2]))


def overloaded_angles(theta1: float) -> tuple[float, float, float]:
    theta2 = theta1 + math.pi / 9
    return theta1, theta2, theta1 + theta2


def structured_channels_overloaded(theta1: float, gamma1: float) -> ChannelSet:
    """Four users on a two-antenna transmitter with ``gamma_3 = gamma_1`` and ``gamma_2 = 1``."""
    if gamma1 <= 0:
        raise DomainError(f"gamma1 must be positive, got {gamma1}")
    if not math.isfinite(theta1):
        raise DomainError(f"theta1 must be finite, got {theta1}")
    angles = overloaded_angles(theta1)
    strengths = (gamma1, 1.0, gamma1)
    cols = [np.ones(2, dtype=complex)]
    for g, th in zip(strengths, angles):
        cols.append(g * np.conj(np.array([1.0, np.exp(1j * th)])))
    return ChannelSet(np.column_stack(cols))


def random_channels(num_tx: int, num_users: int, variances: Sequence[float], seed: int) -> ChannelSet:
    """I.i.d. ``CN(0, variances[k])`` entries for user ``k``; reproducible for a fixed seed."""
    if num_tx < 1 or num_users < 1:
        raise DomainError("num_tx and num_users must be positive")
    var = np.asarray(variances, dtype=float)
    if var.shape != (num_users,):
        raise DomainError(f"expected {num_users} variances, got {var.size}")
    if np.any(var <= 0):
        raise DomainError("channel variances must be positive")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((num_tx, num_users)) + 1j * rng.standard_normal((num_tx, num_users))
    return ChannelSet(z * np.sqrt(var / 2.0))


def snr_db_to_power(snr_db: float) -> float:
    return 10.0 ** (snr_db / 10.0)

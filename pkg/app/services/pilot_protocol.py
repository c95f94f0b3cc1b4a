"""Training reflection schedules and noisy received-signal synthesis.

Single-reflection phases use the first N rows of the I-point DFT matrix as
the RIS training matrix; the double-reflection phase keeps RIS2 fully ON and
switches RIS1 elements on one at a time. Pilot symbols are fixed to 1.
"""
from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np

from app.core.exceptions import ConfigError, DimensionMismatchError, ScheduleError
from app.services.numerics import ComplexMatrix, RngLike, sample_cn

SnrMode = Literal["transmit", "receive"]


@dataclass(frozen=True)
class SingleLinkSchedule:
    link_id: int
    phi: ComplexMatrix  # (N, I)

    @property
    def slots(self) -> int:
        return self.phi.shape[1]

    @property
    def elements(self) -> int:
        return self.phi.shape[0]


@dataclass(frozen=True)
class DoubleLinkSchedule:
    theta2: np.ndarray  # (N,) all ones
    theta1: ComplexMatrix  # (N, N), column n is the one-hot vector of slot n

    @property
    def slots(self) -> int:
        return self.theta1.shape[1]


@dataclass(frozen=True)
class NoiseSpec:
    snr_db: float
    mode: SnrMode = "transmit"
    pilot_power: float = 1.0


def build_single_schedule(n: int, slots: int, link_id: int = 1) -> SingleLinkSchedule:
    if link_id not in (1, 2):
        raise ScheduleError(f"single-reflection schedules exist for links 1 and 2, got {link_id}")
    if slots < n:
        raise ScheduleError(f"rank(Phi) = N requires I >= N (got N={n}, I={slots})")
    rows = np.arange(n)[:, np.newaxis]
    cols = np.arange(slots)[np.newaxis, :]
    # integer product modulo I keeps the phases exact for large n*t
    phi = np.exp(-2j * np.pi * ((rows * cols) % slots) / slots)
    return SingleLinkSchedule(link_id=link_id, phi=phi)


def build_double_schedule(n: int) -> DoubleLinkSchedule:
    return DoubleLinkSchedule(
        theta2=np.ones(n, dtype=np.complex128),
        theta1=np.eye(n, dtype=np.complex128),
    )


def noise_variance(spec: NoiseSpec, avg_rx_power: Optional[float] = None) -> float:
    """sigma^2 from an SNR referenced to the pilot power (transmit) or the clean received power (receive)"""
    if spec.mode == "transmit":
        reference = spec.pilot_power
    elif spec.mode == "receive":
        if avg_rx_power is None or avg_rx_power <= 0:
            raise ConfigError("receive-referenced SNR needs a positive average received power")
        reference = avg_rx_power
    else:
        raise ConfigError(f"unknown SNR mode '{spec.mode}'")
    return reference * 10.0 ** (-spec.snr_db / 10.0)


def synthesize_single_rx(h: ComplexMatrix, sched: SingleLinkSchedule, sigma2: float, rng: RngLike) -> ComplexMatrix:
    """Y = H Phi + W with the other RIS OFF"""
    if h.shape[1] != sched.elements:
        raise DimensionMismatchError(
            f"channel has {h.shape[1]} columns but the schedule drives {sched.elements} elements",
            [h.shape, sched.phi.shape],
        )
    clean = h @ sched.phi
    return clean + sample_cn(clean.shape[0], clean.shape[1], sigma2, rng)


def synthesize_double_rx(h2k: ComplexMatrix, h3k: ComplexMatrix, sigma2: float, rng: RngLike) -> ComplexMatrix:
    """Y3 = H2k H3k + W3, single-reflection contributions cancelled"""
    m, n = h2k.shape
    if m < n:
        raise ScheduleError(f"rank(H2k) = N requires M >= N (got M={m}, N={n})")
    if h3k.shape != (n, n):
        raise DimensionMismatchError(f"H3k must be {n}x{n}, got {h3k.shape}", [h2k.shape, h3k.shape])
    clean = h2k @ h3k
    return clean + sample_cn(m, n, sigma2, rng)


def double_rx_slot(h2k: ComplexMatrix, h3k: ComplexMatrix, sched: DoubleLinkSchedule, slot: int) -> np.ndarray:
    """Clean slot-n observation written as H2k diag(h_3k,n) theta2 theta1[n]"""
    theta1 = sched.theta1[:, slot]
    return sum(h2k @ (h3k[:, i] * sched.theta2) * theta1[i] for i in range(h3k.shape[1]))

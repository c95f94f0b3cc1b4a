"""Statistical realizations of the five constituent links and the cascaded channels.

Each link is Rician: a unit-modulus LoS part built from half-wavelength ULA
steering vectors plus iid CN(0, 1) scattering, scaled by the square root of
its own distance-based path loss.
"""
import logging
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from app.core.exceptions import ConfigError, DegenerateChannelError, DimensionMismatchError
from app.models.config import LinkSpec, SystemConfig
from app.services.numerics import ComplexMatrix, RngLike, RngStream, sample_cn

logger = logging.getLogger(__name__)

# Entries of h_k2 below this magnitude cannot be inverted for H3k
DEGENERATE_GAIN = 1e-300


@dataclass(frozen=True)
class ChannelSet:
    """One realization of every constituent link, path loss included"""
    h_k1: np.ndarray  # (N,)
    h_k2: np.ndarray  # (N,)
    D: ComplexMatrix  # (N, N)
    N1: ComplexMatrix  # (M, N)
    N2: ComplexMatrix  # (M, N)


@dataclass(frozen=True)
class CascadedChannels:
    H1k: ComplexMatrix  # (M, N)
    H2k: ComplexMatrix  # (M, N)
    H3k: ComplexMatrix  # (N, N)

    def for_link(self, link_id: int) -> ComplexMatrix:
        return {1: self.H1k, 2: self.H2k, 3: self.H3k}[link_id]


def ris_phase(phases: np.ndarray, amplitude: float = 1.0) -> np.ndarray:
    """Reflection coefficients theta_n = beta * exp(i phi_n)"""
    if not 0.0 <= amplitude <= 1.0:
        raise ConfigError(f"reflection amplitude must lie in [0, 1], got {amplitude}")
    return amplitude * np.exp(1j * np.mod(np.asarray(phases, dtype=np.float64), 2 * np.pi))


def ris_off(n: int) -> np.ndarray:
    """Non-reflective state"""
    return np.zeros(n, dtype=np.complex128)


def path_loss_linear(distance: float, exponent: float, beta0_db: float = -15.0, d0: float = 10.0) -> float:
    if distance <= 0 or d0 <= 0:
        raise ConfigError(f"distances must be positive (d={distance}, d0={d0})")
    return 10.0 ** (beta0_db / 10.0) * (distance / d0) ** (-exponent)


def steering_vector(n: int, angle: float) -> np.ndarray:
    """Half-wavelength ULA response, unit modulus entries"""
    return np.exp(1j * np.pi * np.arange(n) * np.sin(angle))


def los_component(rows: int, cols: int, angles) -> ComplexMatrix:
    departure, arrival = angles
    return np.outer(steering_vector(rows, arrival), steering_vector(cols, departure).conj())


def sample_rician(
    rows: int,
    cols: int,
    spec: LinkSpec,
    rng: RngLike,
    beta0_db: float = -15.0,
    d0: float = 10.0,
) -> ComplexMatrix:
    gamma = spec.rician_factor
    scattered = sample_cn(rows, cols, 1.0, rng)
    if gamma == 0:
        h = scattered
    elif np.isinf(gamma):
        h = los_component(rows, cols, spec.los_angles)
    else:
        h_bar = los_component(rows, cols, spec.los_angles)
        h = np.sqrt(gamma / (gamma + 1.0)) * h_bar + np.sqrt(1.0 / (gamma + 1.0)) * scattered
    beta = path_loss_linear(spec.distance, spec.pathloss_exponent, beta0_db, d0)
    return np.sqrt(beta) * h


def sample_channel_set(cfg: SystemConfig, user: int, rng: RngStream) -> ChannelSet:
    """Five independent link draws for one user; each link gets its own child stream"""
    user_rng = rng.child("user", user)

    def draw(name: str, rows: int, cols: int) -> ComplexMatrix:
        return sample_rician(rows, cols, cfg.links[name], user_rng.child(name), cfg.beta0_db, cfg.d0)

    M, N = cfg.M, cfg.N
    return ChannelSet(
        h_k1=draw("h_k1", N, 1)[:, 0],
        h_k2=draw("h_k2", N, 1)[:, 0],
        D=draw("D", N, N),
        N1=draw("N1", M, N),
        N2=draw("N2", M, N),
    )


def sample_users(cfg: SystemConfig, rng: RngStream, users: Optional[int] = None) -> List[ChannelSet]:
    """K independent ChannelSets, no inter-user correlation"""
    return [sample_channel_set(cfg, k, rng) for k in range(users or cfg.K)]


def assemble_cascaded(cs: ChannelSet) -> CascadedChannels:
    if np.any(np.abs(cs.h_k2) < DEGENERATE_GAIN):
        raise DegenerateChannelError("h_k2 has a vanishing entry; resample the channel set")
    H1k = cs.N1 * cs.h_k1[np.newaxis, :]
    H2k = cs.N2 * cs.h_k2[np.newaxis, :]
    # column n: diag(h_k2)^{-1} d_n h_k1[n]
    H3k = (cs.D / cs.h_k2[:, np.newaxis]) * cs.h_k1[np.newaxis, :]
    return CascadedChannels(H1k=H1k, H2k=H2k, H3k=H3k)


def sample_cascaded(cfg: SystemConfig, user: int, rng: RngStream, max_retries: int = 8) -> CascadedChannels:
    """Draw and assemble, resampling degenerate realizations on fresh child streams"""
    for attempt in range(max_retries + 1):
        stream = rng if attempt == 0 else rng.child("retry", attempt)
        try:
            return assemble_cascaded(sample_channel_set(cfg, user, stream))
        except DegenerateChannelError:
            logger.warning("Degenerate channel draw for user %d, resampling (attempt %d)", user, attempt + 1)
    raise DegenerateChannelError(f"no usable channel realization after {max_retries} retries")


def _check_phase(theta: np.ndarray, n: int, name: str) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.complex128)
    if theta.shape != (n,):
        raise DimensionMismatchError(f"{name} must have shape ({n},), got {theta.shape}", [theta.shape])
    return theta


def effective_channel(cs: ChannelSet, theta1: np.ndarray, theta2: np.ndarray) -> np.ndarray:
    """h_k = N2 Phi2 D Phi1 h_k1 + N2 Phi2 h_k2 + N1 Phi1 h_k1"""
    n = cs.h_k1.shape[0]
    theta1 = _check_phase(theta1, n, "theta1")
    theta2 = _check_phase(theta2, n, "theta2")
    via_both = cs.N2 @ (theta2 * (cs.D @ (theta1 * cs.h_k1)))
    via_ris2 = cs.N2 @ (theta2 * cs.h_k2)
    via_ris1 = cs.N1 @ (theta1 * cs.h_k1)
    return via_both + via_ris2 + via_ris1


def effective_channel_cascaded(cc: CascadedChannels, theta1: np.ndarray, theta2: np.ndarray) -> np.ndarray:
    """Same channel written through H1k, H2k and the columns of H3k"""
    n = cc.H3k.shape[0]
    theta1 = _check_phase(theta1, n, "theta1")
    theta2 = _check_phase(theta2, n, "theta2")
    double = sum(cc.H2k @ (cc.H3k[:, i] * theta2) * theta1[i] for i in range(n))
    return double + cc.H2k @ theta2 + cc.H1k @ theta1

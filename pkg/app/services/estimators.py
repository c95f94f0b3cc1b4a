"""LS and LMMSE estimators of the single- and double-reflection links, channel
correlation and the NMSE metric."""
from dataclasses import dataclass
from typing import Iterable, Literal, Sequence

import numpy as np

from app.core.exceptions import (
    ConfigError,
    DimensionMismatchError,
    NotPositiveDefiniteError,
    SingularMatrixError,
)
from app.services.numerics import (
    ComplexMatrix,
    as_matrix,
    condition_estimate,
    conj_transpose,
    fro_norm_sq,
    left_pinv,
    require_full_column_rank,
    solve,
    solve_hermitian,
)

NoiseConvention = Literal["paper_trace", "per_entry"]


@dataclass(frozen=True)
class CorrelationMatrix:
    R: ComplexMatrix
    sample_count: int


@dataclass(frozen=True)
class NoiseScalar:
    value: float
    convention: NoiseConvention = "per_entry"


def noise_scalar(sigma2: float, rows: int, cols: int, convention: NoiseConvention = "paper_trace") -> NoiseScalar:
    """paper_trace: expected tr(W^H W) = rows*cols*sigma^2; per_entry: sigma^2"""
    if convention == "paper_trace":
        return NoiseScalar(rows * cols * sigma2, convention)
    if convention == "per_entry":
        return NoiseScalar(sigma2, convention)
    raise ConfigError(f"unknown noise convention '{convention}'")


def ls_single(y: ComplexMatrix, phi: ComplexMatrix) -> ComplexMatrix:
    """Y Phi^H (Phi Phi^H)^{-1}"""
    y, phi = as_matrix(y), as_matrix(phi)
    if y.shape[1] != phi.shape[1]:
        raise DimensionMismatchError(
            f"observation has {y.shape[1]} slots, schedule has {phi.shape[1]}", [y.shape, phi.shape]
        )
    gram = phi @ conj_transpose(phi)
    try:
        # (Phi Phi^H) X^H = Phi Y^H
        return conj_transpose(solve_hermitian(gram, phi @ conj_transpose(y)))
    except NotPositiveDefiniteError:
        raise SingularMatrixError("ls_single: Phi is rank deficient", condition=condition_estimate(phi))


def lmmse_single(y: ComplexMatrix, phi: ComplexMatrix, corr: CorrelationMatrix, theta: NoiseScalar) -> ComplexMatrix:
    """Y (Phi^H R Phi + theta I)^{-1} Phi^H R"""
    y, phi = as_matrix(y), as_matrix(phi)
    r = as_matrix(corr.R)
    if y.shape[1] != phi.shape[1] or r.shape != (phi.shape[0], phi.shape[0]):
        raise DimensionMismatchError("lmmse_single shapes disagree", [y.shape, phi.shape, r.shape])
    phi_h = conj_transpose(phi)
    inner = phi_h @ r @ phi + theta.value * np.eye(phi.shape[1])
    inner = 0.5 * (inner + conj_transpose(inner))
    try:
        shrunk = conj_transpose(solve_hermitian(inner, conj_transpose(y)))
    except NotPositiveDefiniteError:
        raise SingularMatrixError("lmmse_single: regularized Gram matrix is singular", condition=condition_estimate(inner))
    return shrunk @ phi_h @ r


def ls_double(h2k: ComplexMatrix, y3: ComplexMatrix) -> ComplexMatrix:
    """(H2k^H H2k)^{-1} H2k^H Y3"""
    h2k, y3 = as_matrix(h2k), as_matrix(y3)
    if h2k.shape[0] != y3.shape[0]:
        raise DimensionMismatchError("ls_double: H2k and Y3 row counts differ", [h2k.shape, y3.shape])
    return left_pinv(h2k) @ y3


def lmmse_double(h2k: ComplexMatrix, y3: ComplexMatrix, corr: CorrelationMatrix, theta: NoiseScalar) -> ComplexMatrix:
    """R (R + (H2k^H H2k)^{-1} theta)^{-1} H2k^dagger Y3.

    Evaluated as R (G R + theta I)^{-1} H2k^H Y3 with G = H2k^H H2k, which is
    the same matrix without inverting G.
    """
    h2k, y3 = as_matrix(h2k), as_matrix(y3)
    r = as_matrix(corr.R)
    n = h2k.shape[1]
    if r.shape != (n, n):
        raise DimensionMismatchError(f"R must be {n}x{n}, got {r.shape}", [h2k.shape, r.shape])
    if h2k.shape[0] != y3.shape[0]:
        raise DimensionMismatchError("lmmse_double: H2k and Y3 row counts differ", [h2k.shape, y3.shape])
    require_full_column_rank(h2k, "lmmse_double")
    gram = conj_transpose(h2k) @ h2k
    system = gram @ r + theta.value * np.eye(n)
    return r @ solve(system, conj_transpose(h2k) @ y3)


def empirical_correlation(samples: Iterable[ComplexMatrix]) -> CorrelationMatrix:
    """R = (1/T) sum_t H_t^H H_t"""
    total = None
    count = 0
    for h in samples:
        h = as_matrix(h)
        gram = conj_transpose(h) @ h
        if total is None:
            total = np.zeros_like(gram)
        elif gram.shape != total.shape:
            raise DimensionMismatchError("correlation samples differ in shape", [gram.shape, total.shape])
        total += gram
        count += 1
    if count == 0:
        raise ConfigError("empirical_correlation needs at least one sample")
    r = total / count
    return CorrelationMatrix(R=0.5 * (r + conj_transpose(r)), sample_count=count)


def nmse(estimates: Sequence[np.ndarray], labels: Sequence[np.ndarray]) -> float:
    """(1/T) sum_t ||H_t - H^_t||_F^2 / ||H_t||_F^2"""
    estimates = np.asarray(estimates)
    labels = np.asarray(labels)
    if estimates.shape != labels.shape:
        raise DimensionMismatchError("nmse: estimate and label batches differ", [estimates.shape, labels.shape])
    if labels.ndim == 2:
        estimates, labels = estimates[np.newaxis], labels[np.newaxis]
    ratios = []
    for est, lab in zip(estimates, labels):
        energy = fro_norm_sq(lab)
        if energy == 0:
            raise ConfigError("nmse: a label has zero norm")
        ratios.append(fro_norm_sq(lab - est) / energy)
    if not ratios:
        raise ConfigError("nmse: empty batch")
    return float(np.mean(ratios))

"""Complex linear algebra, counter-based random streams and norms.

Every routine works on 2-D ``complex128`` numpy arrays (``ComplexMatrix``) and
returns new arrays; inputs are never modified. Inverses are never formed
explicitly: Hermitian systems go through Cholesky, pseudo-inverses through QR.
"""
import hashlib
import math
from dataclasses import dataclass
from typing import Union

import numpy as np
import scipy.linalg

from app.core.exceptions import (
    ConfigError,
    DimensionMismatchError,
    NotPositiveDefiniteError,
    SingularMatrixError,
)

ComplexMatrix = np.ndarray

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class RngStream:
    """A reproducible random stream identified by (master_seed, stream_id).

    Backed by numpy's Philox counter-based bit generator keyed with both
    words, so any stream can be rebuilt without replaying earlier draws.
    """
    master_seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        key = ((self.stream_id & _MASK64) << 64) | (self.master_seed & _MASK64)
        return np.random.Generator(np.random.Philox(key=key))

    def child(self, *labels: Union[int, str]) -> "RngStream":
        """Derive an independent stream for a labelled sub-task (user, sample, link...)"""
        path = "/".join([str(self.stream_id), *map(str, labels)])
        digest = hashlib.blake2b(path.encode("utf-8"), digest_size=8).digest()
        return RngStream(self.master_seed, int.from_bytes(digest, "little"))


RngLike = Union[RngStream, np.random.Generator]


def as_generator(rng: RngLike) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator()
    return rng


def as_matrix(a) -> ComplexMatrix:
    """Validate and convert to a 2-D complex128 matrix"""
    m = np.asarray(a, dtype=np.complex128)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise DimensionMismatchError(f"expected a non-empty 2-D matrix, got shape {m.shape}", [m.shape])
    return m


def _check_finite(m: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(m)):
        raise SingularMatrixError(f"{what} produced non-finite entries")
    return m


def matmul(a: ComplexMatrix, b: ComplexMatrix) -> ComplexMatrix:
    a, b = as_matrix(a), as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise DimensionMismatchError(
            f"matmul inner dimensions disagree: {a.shape} x {b.shape}", [a.shape, b.shape]
        )
    return a @ b


def conj_transpose(a: ComplexMatrix) -> ComplexMatrix:
    return as_matrix(a).conj().T.copy()


def fro_norm_sq(a) -> float:
    """Sum of squared magnitudes, correctly rounded so entry order never matters"""
    m = np.asarray(a)
    sq = (m.real ** 2 + m.imag ** 2) if np.iscomplexobj(m) else m * m
    return math.fsum(np.ravel(sq).tolist())


def condition_estimate(a: ComplexMatrix) -> float:
    s = scipy.linalg.svdvals(a)
    return float(np.inf) if s[-1] == 0 else float(s[0] / s[-1])


def require_full_column_rank(a: ComplexMatrix, what: str) -> None:
    """Raise SingularMatrixError unless the smallest singular value of a exceeds 1e-10 of the largest"""
    a = as_matrix(a)
    if a.shape[0] < a.shape[1]:
        raise DimensionMismatchError(f"{what} needs rows >= cols, got {a.shape}", [a.shape])
    s = scipy.linalg.svdvals(a)
    if s.size and s[-1] <= 1e-10 * s[0]:
        cond = float(np.inf) if s[-1] == 0 else float(s[0] / s[-1])
        raise SingularMatrixError(f"{what}: matrix is not full column rank", condition=cond)


def left_pinv(a: ComplexMatrix) -> ComplexMatrix:
    """(A^H A)^{-1} A^H for a tall full-column-rank A, computed through a thin QR"""
    a = as_matrix(a)
    require_full_column_rank(a, "left_pinv")
    q, r = scipy.linalg.qr(a, mode="economic")
    return scipy.linalg.solve_triangular(r, q.conj().T, lower=False)


def solve_hermitian(a: ComplexMatrix, b: ComplexMatrix) -> ComplexMatrix:
    """Solve a x = b for Hermitian positive definite a via Cholesky"""
    a, b = as_matrix(a), as_matrix(b)
    n = a.shape[0]
    if a.shape != (n, n) or b.shape[0] != n:
        raise DimensionMismatchError(
            f"solve_hermitian shapes disagree: {a.shape} and {b.shape}", [a.shape, b.shape]
        )
    scale = max(1.0, float(np.max(np.abs(a))))
    if np.max(np.abs(a - a.conj().T)) > 1e-10 * scale:
        raise NotPositiveDefiniteError("solve_hermitian: matrix is not Hermitian")
    try:
        factor = scipy.linalg.cho_factor(a, lower=True, check_finite=True)
    except np.linalg.LinAlgError as e:
        raise NotPositiveDefiniteError(f"solve_hermitian: non-positive pivot ({e})")
    return _check_finite(scipy.linalg.cho_solve(factor, b), "solve_hermitian")


def solve(a: ComplexMatrix, b: ComplexMatrix) -> ComplexMatrix:
    """Solve a general square system a x = b via LU"""
    a, b = as_matrix(a), as_matrix(b)
    n = a.shape[0]
    if a.shape != (n, n) or b.shape[0] != n:
        raise DimensionMismatchError(f"solve shapes disagree: {a.shape} and {b.shape}", [a.shape, b.shape])
    try:
        lu = scipy.linalg.lu_factor(a, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as e:
        raise SingularMatrixError(f"solve: {e}")
    if np.any(np.abs(np.diag(lu[0])) <= 1e-14 * max(1e-300, float(np.max(np.abs(lu[0]))))):
        raise SingularMatrixError("solve: matrix is singular", condition=condition_estimate(a))
    return _check_finite(scipy.linalg.lu_solve(lu, b), "solve")


def sample_cn(rows: int, cols: int, variance: float, rng: RngLike) -> ComplexMatrix:
    """iid circularly symmetric CN(0, variance) entries"""
    if variance < 0:
        raise ConfigError(f"variance must be >= 0, got {variance}")
    if variance == 0:
        return np.zeros((rows, cols), dtype=np.complex128)
    parts = as_generator(rng).standard_normal((2, rows, cols))
    return np.sqrt(variance / 2.0) * (parts[0] + 1j * parts[1])

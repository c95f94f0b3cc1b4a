import numpy as np
import pytest

from app.core.exceptions import ConfigError, DimensionMismatchError, SingularMatrixError
from app.services.estimators import (
    CorrelationMatrix,
    NoiseScalar,
    empirical_correlation,
    lmmse_double,
    lmmse_single,
    ls_double,
    ls_single,
    nmse,
    noise_scalar,
)
from app.services.numerics import RngStream, sample_cn
from app.services.pilot_protocol import build_single_schedule, synthesize_double_rx, synthesize_single_rx


def _spd(n, seed=0):
    g = sample_cn(n, n, 1.0, RngStream(seed))
    return g.conj().T @ g + np.eye(n)


def test_noise_scalar_conventions():
    """Test paper_trace and per_entry noise scalars"""
    assert noise_scalar(0.5, 4, 8).value == 16.0
    assert noise_scalar(0.5, 4, 8, "per_entry").value == 0.5
    with pytest.raises(ConfigError):
        noise_scalar(0.5, 4, 8, "other")


def test_ls_single_exact_recovery_and_dft_closed_form():
    """Test noiseless recovery and Y Phi^H / I under the DFT schedule"""
    h = sample_cn(6, 4, 1.0, RngStream(1))
    sched = build_single_schedule(4, 6)
    assert np.linalg.norm(ls_single(h @ sched.phi, sched.phi) - h) <= 1e-9 * np.linalg.norm(h)
    y = synthesize_single_rx(h, sched, 0.7, RngStream(2))
    assert np.max(np.abs(ls_single(y, sched.phi) - y @ sched.phi.conj().T / 6)) < 1e-10


def test_ls_single_rank_deficient_schedule():
    """Test a rank-deficient Phi raises a singular-matrix error"""
    phi = np.ones((3, 5), dtype=complex)
    phi[0] = 0.0
    with pytest.raises(SingularMatrixError):
        ls_single(np.ones((4, 5)), phi)
    with pytest.raises(DimensionMismatchError):
        ls_single(np.ones((4, 4)), phi)


def test_ls_single_residual_energy():
    """Test E||H^ - H||^2 = M N sigma^2 / I with the DFT schedule"""
    m, n, slots, sigma2 = 16, 8, 8, 0.5
    rng = np.random.default_rng(3)
    h = sample_cn(m, n, 1.0, RngStream(3))
    sched = build_single_schedule(n, slots)
    errors = [np.sum(np.abs(ls_single(synthesize_single_rx(h, sched, sigma2, rng), sched.phi) - h) ** 2)
              for _ in range(10000)]
    assert abs(np.mean(errors) / (m * n * sigma2 / slots) - 1.0) < 0.02


def test_ls_single_unbiased_and_linear():
    """Test LS is unbiased and exactly linear in Y"""
    h = sample_cn(4, 3, 1.0, RngStream(4))
    sched = build_single_schedule(3, 4)
    rng = np.random.default_rng(5)
    diffs = np.array([ls_single(synthesize_single_rx(h, sched, 1.0, rng), sched.phi) - h for _ in range(10000)])
    stderr = np.sqrt(1.0 / 4 / 10000)
    assert np.all(np.abs(diffs.mean(axis=0)) < 4 * stderr)

    y1 = sample_cn(4, 4, 1.0, RngStream(6))
    y2 = sample_cn(4, 4, 1.0, RngStream(7))
    alpha = 0.3 - 1.2j
    combined = ls_single(alpha * y1 + y2, sched.phi)
    assert np.max(np.abs(combined - (alpha * ls_single(y1, sched.phi) + ls_single(y2, sched.phi)))) < 1e-10


def test_lmmse_single_limits():
    """Test the unregularized collapse to LS and the infinite-noise limit"""
    sched = build_single_schedule(4, 4)
    y = sample_cn(6, 4, 1.0, RngStream(8))
    corr = CorrelationMatrix(R=_spd(4, 9), sample_count=1)
    collapsed = lmmse_single(y, sched.phi, corr, NoiseScalar(0.0))
    assert np.max(np.abs(collapsed - ls_single(y, sched.phi))) < 1e-8
    huge = NoiseScalar(1e15 * np.trace(corr.R).real)
    assert np.max(np.abs(lmmse_single(y, sched.phi, corr, huge))) < 1e-10


def test_lmmse_single_dominates_ls():
    """Test per_entry LMMSE beats LS over iid Rayleigh channels"""
    m, n, sigma2 = 8, 4, 1.0
    sched = build_single_schedule(n, n)
    corr = CorrelationMatrix(R=m * np.eye(n), sample_count=0)
    theta = noise_scalar(sigma2, m, n, "per_entry")
    base = RngStream(10)
    mse_ls = mse_lmmse = 0.0
    for t in range(2000):
        h = sample_cn(m, n, 1.0, base.child("h", t))
        y = synthesize_single_rx(h, sched, sigma2, base.child("w", t))
        mse_ls += np.sum(np.abs(ls_single(y, sched.phi) - h) ** 2)
        mse_lmmse += np.sum(np.abs(lmmse_single(y, sched.phi, corr, theta) - h) ** 2)
    assert mse_lmmse <= 1.01 * mse_ls


def test_ls_double_cases():
    """Test noiseless recovery and the orthonormal-column adjoint"""
    h2k = sample_cn(8, 4, 1.0, RngStream(11))
    h3k = sample_cn(4, 4, 1.0, RngStream(12))
    assert np.linalg.norm(ls_double(h2k, h2k @ h3k) - h3k) <= 1e-9 * np.linalg.norm(h3k)
    q, _ = np.linalg.qr(h2k)
    y3 = sample_cn(8, 4, 1.0, RngStream(13))
    assert np.allclose(ls_double(q, y3), q.conj().T @ y3, atol=1e-10)


def test_ls_double_rank_deficient():
    """Test a rank-deficient H2k is rejected"""
    h2k = np.ones((6, 3), dtype=complex)
    with pytest.raises(SingularMatrixError):
        ls_double(h2k, np.ones((6, 3)))


def test_ls_double_residual_energy():
    """Test E||H3^ - H3k||^2 = sigma^2 N tr((H2k^H H2k)^-1) at fixed H2k"""
    m, n, sigma2 = 16, 8, 0.4
    h2k = sample_cn(m, n, 1.0, RngStream(14))
    h3k = sample_cn(n, n, 1.0, RngStream(15))
    rng = np.random.default_rng(16)
    errors = [np.sum(np.abs(ls_double(h2k, synthesize_double_rx(h2k, h3k, sigma2, rng)) - h3k) ** 2)
              for _ in range(10000)]
    expected = sigma2 * n * np.trace(np.linalg.inv(h2k.conj().T @ h2k)).real
    assert abs(np.mean(errors) / expected - 1.0) < 0.03


def test_lmmse_double_limits():
    """Test the unregularized collapse to LS and the infinite-noise limit"""
    h2k = sample_cn(8, 4, 1.0, RngStream(17))
    y3 = sample_cn(8, 4, 1.0, RngStream(18))
    corr = CorrelationMatrix(R=_spd(4, 19), sample_count=1)
    assert np.max(np.abs(lmmse_double(h2k, y3, corr, NoiseScalar(0.0)) - ls_double(h2k, y3))) < 1e-8
    huge = NoiseScalar(1e15 * np.trace(corr.R).real)
    assert np.max(np.abs(lmmse_double(h2k, y3, corr, huge))) < 1e-10


def test_lmmse_double_dominates_ls():
    """Test per_entry LMMSE beats LS on the double-reflection link"""
    m, n, sigma2 = 8, 4, 1.0
    h2k = sample_cn(m, n, 1.0, RngStream(20))
    corr = CorrelationMatrix(R=n * np.eye(n), sample_count=0)
    theta = noise_scalar(sigma2, m, n, "per_entry")
    base = RngStream(21)
    mse_ls = mse_lmmse = 0.0
    for t in range(2000):
        h3k = sample_cn(n, n, 1.0, base.child("h", t))
        y3 = synthesize_double_rx(h2k, h3k, sigma2, base.child("w", t))
        mse_ls += np.sum(np.abs(ls_double(h2k, y3) - h3k) ** 2)
        mse_lmmse += np.sum(np.abs(lmmse_double(h2k, y3, corr, theta) - h3k) ** 2)
    assert mse_lmmse <= 1.01 * mse_ls


def test_lmmse_double_shape_check():
    """Test a correlation matrix of the wrong size is rejected"""
    with pytest.raises(DimensionMismatchError):
        lmmse_double(np.eye(4), np.eye(4), CorrelationMatrix(np.eye(3), 1), NoiseScalar(1.0))


def test_lmmse_double_rejects_rank_deficient_h2k():
    """Test a rank-deficient or wide H2k is rejected before any solve"""
    h2k = sample_cn(6, 3, 1.0, RngStream(4))
    h2k[:, 2] = h2k[:, 0] + h2k[:, 1]
    corr = CorrelationMatrix(_spd(3), 1)
    with pytest.raises(SingularMatrixError) as err:
        lmmse_double(h2k, np.ones((6, 2)), corr, NoiseScalar(0.1))
    assert err.value.condition > 1e10
    with pytest.raises(DimensionMismatchError):
        lmmse_double(np.ones((2, 3)), np.ones((2, 2)), corr, NoiseScalar(0.1))
    with pytest.raises(DimensionMismatchError):
        lmmse_double(sample_cn(6, 3, 1.0, RngStream(5)), np.ones((5, 2)), corr, NoiseScalar(0.1))


def test_empirical_correlation():
    """Test identity, zero and iid Rayleigh correlation estimates"""
    assert np.array_equal(empirical_correlation([np.eye(3)]).R, np.eye(3))
    assert np.array_equal(empirical_correlation([np.zeros((2, 3))] * 4).R, np.zeros((3, 3)))
    base = RngStream(22)
    corr = empirical_correlation(sample_cn(4, 3, 1.0, base.child(t)) for t in range(10000))
    assert corr.sample_count == 10000
    assert np.allclose(np.diag(corr.R).real, 4.0, rtol=0.05)
    off = corr.R - np.diag(np.diag(corr.R))
    assert np.max(np.abs(off)) < 0.05 * 4
    assert np.allclose(corr.R, corr.R.conj().T, atol=1e-10)


def test_empirical_correlation_empty():
    """Test an empty sample list is rejected"""
    with pytest.raises(ConfigError):
        empirical_correlation([])


def test_nmse_identities():
    """Test nmse on perfect, zero and doubled estimates"""
    h = sample_cn(3, 3, 1.0, RngStream(23))
    assert nmse([h], [h]) == 0.0
    assert abs(nmse([np.zeros_like(h)], [h]) - 1.0) < 1e-15
    assert abs(nmse([2 * h], [h]) - 1.0) < 1e-12


def test_nmse_unitary_invariance():
    """Test nmse is unchanged by a common unitary rotation"""
    h = sample_cn(4, 4, 1.0, RngStream(24))
    est = h + 0.1 * sample_cn(4, 4, 1.0, RngStream(25))
    u, _ = np.linalg.qr(sample_cn(4, 4, 1.0, RngStream(26)))
    assert abs(nmse([u @ est], [u @ h]) - nmse([est], [h])) < 1e-10


def test_nmse_rejects_zero_label():
    """Test a zero-norm label is rejected"""
    with pytest.raises(ConfigError):
        nmse([np.ones((2, 2))], [np.zeros((2, 2))])

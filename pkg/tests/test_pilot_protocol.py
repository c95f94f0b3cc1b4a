import numpy as np
import pytest

from app.core.exceptions import ConfigError, DimensionMismatchError, ScheduleError
from app.services.numerics import RngStream, sample_cn
from app.services.pilot_protocol import (
    NoiseSpec,
    SingleLinkSchedule,
    build_double_schedule,
    build_single_schedule,
    double_rx_slot,
    noise_variance,
    synthesize_double_rx,
    synthesize_single_rx,
)


def test_dft_schedule_small_cases():
    """Test the 2-point and 1-point DFT schedules"""
    assert np.allclose(build_single_schedule(2, 2).phi, [[1, 1], [1, -1]], atol=1e-15)
    assert np.allclose(build_single_schedule(1, 1).phi, [[1]])


@pytest.mark.parametrize("n,slots", [(4, 4), (3, 7), (8, 16), (32, 32)])
def test_dft_schedule_rows_are_orthogonal(n, slots):
    """Test Phi Phi^H = I * identity and unit-modulus entries"""
    sched = build_single_schedule(n, slots)
    assert sched.elements == n and sched.slots == slots
    assert np.max(np.abs(sched.phi @ sched.phi.conj().T - slots * np.eye(n))) < 1e-10
    assert np.allclose(np.abs(sched.phi), 1.0)


def test_single_schedule_rejects_short_training():
    """Test I < N is rejected with the rank requirement"""
    with pytest.raises(ScheduleError) as exc:
        build_single_schedule(4, 3)
    assert "rank" in exc.value.detail
    with pytest.raises(ScheduleError):
        build_single_schedule(4, 4, link_id=3)


def test_double_schedule_switches_each_element_once():
    """Test RIS2 fully ON and one-hot RIS1 slots"""
    sched = build_double_schedule(5)
    assert np.array_equal(sched.theta2, np.ones(5))
    assert sched.slots == 5
    assert np.array_equal(sched.theta1, np.eye(5))


def test_noise_variance():
    """Test transmit and receive referenced noise variances"""
    assert noise_variance(NoiseSpec(0.0)) == 1.0
    assert abs(noise_variance(NoiseSpec(10.0)) - 0.1) < 1e-15
    assert abs(noise_variance(NoiseSpec(-10.0, "receive"), 3e-7) - 3e-6) < 1e-18
    assert abs(noise_variance(NoiseSpec(0.0, pilot_power=2.0)) - 2.0) < 1e-15


def test_noise_variance_receive_needs_power():
    """Test receive mode without a calibrated power is rejected"""
    with pytest.raises(ConfigError):
        noise_variance(NoiseSpec(0.0, "receive"))


def test_synthesize_single_rx_noiseless_and_identity():
    """Test Y = H Phi without noise and Y = H + W for an identity schedule"""
    h = sample_cn(6, 4, 1.0, RngStream(1))
    sched = build_single_schedule(4, 6)
    assert np.array_equal(synthesize_single_rx(h, sched, 0.0, RngStream(2)), h @ sched.phi)
    identity = SingleLinkSchedule(link_id=1, phi=np.eye(4, dtype=complex))
    y = synthesize_single_rx(h, identity, 0.5, RngStream(3))
    assert np.allclose(y, h + sample_cn(6, 4, 0.5, RngStream(3)))


def test_synthesize_single_rx_noise_energy():
    """Test E||Y - H Phi||^2 = M I sigma^2"""
    rng = np.random.default_rng(0)
    h = sample_cn(8, 4, 1.0, RngStream(4))
    sched = build_single_schedule(4, 8)
    sigma2 = 0.3
    energy = np.mean([np.sum(np.abs(synthesize_single_rx(h, sched, sigma2, rng) - h @ sched.phi) ** 2)
                      for _ in range(2000)])
    assert abs(energy / (8 * 8 * sigma2) - 1.0) < 0.02


def test_synthesize_single_rx_shape_check():
    """Test a channel that does not match the schedule is rejected"""
    with pytest.raises(DimensionMismatchError):
        synthesize_single_rx(np.ones((4, 3)), build_single_schedule(4, 4), 1.0, RngStream(0))


def test_synthesize_double_rx():
    """Test the double-reflection observation cases"""
    h2k = sample_cn(6, 4, 1.0, RngStream(5))
    h3k = sample_cn(4, 4, 1.0, RngStream(6))
    assert np.array_equal(synthesize_double_rx(h2k, h3k, 0.0, RngStream(7)), h2k @ h3k)
    y = synthesize_double_rx(h2k, np.eye(4), 0.2, RngStream(8))
    assert np.allclose(y, h2k + sample_cn(6, 4, 0.2, RngStream(8)))


def test_synthesize_double_rx_rank_requirement():
    """Test M < N is rejected"""
    with pytest.raises(ScheduleError):
        synthesize_double_rx(np.ones((3, 4)), np.eye(4), 1.0, RngStream(0))
    with pytest.raises(DimensionMismatchError):
        synthesize_double_rx(np.ones((6, 4)), np.eye(3), 1.0, RngStream(0))


def test_double_rx_slot_matches_matrix_form():
    """Test each slot's diagonal form equals the column of H2k H3k"""
    sched = build_double_schedule(4)
    for seed in range(100):
        h2k = sample_cn(6, 4, 1.0, RngStream(seed).child("h2"))
        h3k = sample_cn(4, 4, 1.0, RngStream(seed).child("h3"))
        y = synthesize_double_rx(h2k, h3k, 0.0, RngStream(seed))
        for n in range(4):
            slot = double_rx_slot(h2k, h3k, sched, n)
            assert np.linalg.norm(slot - y[:, n]) <= 1e-9 * np.linalg.norm(y[:, n])

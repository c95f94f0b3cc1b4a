import numpy as np
import pytest

from app.core.exceptions import ConfigError, DegenerateChannelError, DimensionMismatchError
from app.models.config import LinkSpec, SystemConfig
from app.services.channel_model import (
    ChannelSet,
    assemble_cascaded,
    effective_channel,
    effective_channel_cascaded,
    los_component,
    path_loss_linear,
    ris_off,
    ris_phase,
    sample_cascaded,
    sample_channel_set,
    sample_rician,
    sample_users,
)
from app.services.numerics import RngStream, sample_cn

BETA0 = 10 ** -1.5


def _channel_set(m=6, n=4, seed=0):
    rng = RngStream(seed)
    return ChannelSet(
        h_k1=sample_cn(n, 1, 1.0, rng.child(1))[:, 0],
        h_k2=sample_cn(n, 1, 1.0, rng.child(2))[:, 0],
        D=sample_cn(n, n, 1.0, rng.child(3)),
        N1=sample_cn(m, n, 1.0, rng.child(4)),
        N2=sample_cn(m, n, 1.0, rng.child(5)),
    )


def test_path_loss_linear():
    """Test path loss at the reference distance, a decade and the 90 m link"""
    assert abs(path_loss_linear(10.0, 2.3) - 0.0316228) < 1e-7
    assert abs(path_loss_linear(100.0, 2.0) - BETA0 * 1e-2) < 1e-15
    assert abs(path_loss_linear(90.0, 2.3) - BETA0 * 9 ** -2.3) < 1e-15
    assert path_loss_linear(50.0, 2.3) < path_loss_linear(40.0, 2.3)
    assert path_loss_linear(50.0, 2.3) < path_loss_linear(50.0, 2.0)


def test_path_loss_rejects_nonpositive_distance():
    """Test path loss rejects a zero distance"""
    with pytest.raises(ConfigError):
        path_loss_linear(0.0, 2.0)


def test_sample_rician_rayleigh_case():
    """Test gamma = 0 is the scaled scattered component exactly"""
    spec = LinkSpec(rician_factor=0.0, distance=16.0, pathloss_exponent=2.0)
    beta = path_loss_linear(16.0, 2.0)
    h = sample_rician(5, 3, spec, RngStream(3))
    assert np.array_equal(h, np.sqrt(beta) * sample_cn(5, 3, 1.0, RngStream(3)))


def test_sample_rician_los_limit():
    """Test a huge Rician factor converges to the LoS component"""
    spec = LinkSpec(rician_factor=1e12, distance=80.0, pathloss_exponent=2.3, los_angles=(0.6, -0.6))
    beta = path_loss_linear(80.0, 2.3)
    h = sample_rician(4, 4, spec, RngStream(1))
    assert np.max(np.abs(h - np.sqrt(beta) * los_component(4, 4, (0.6, -0.6)))) < 1e-5


def test_sample_rician_second_moment():
    """Test E|H|^2 = beta for Rayleigh and Rician links"""
    for gamma in (0.0, 10.0):
        spec = LinkSpec(rician_factor=gamma, distance=90.0, pathloss_exponent=2.3, los_angles=(0.3, 0.2))
        h = sample_rician(1000, 100, spec, RngStream(9))
        beta = path_loss_linear(90.0, 2.3)
        assert abs(np.mean(np.abs(h) ** 2) / beta - 1.0) < 0.02


def test_rayleigh_entries_have_zero_mean():
    """Test gamma = 0 entries pass a mean-zero check at 3 standard errors"""
    spec = LinkSpec(rician_factor=0.0)
    h = sample_rician(500, 200, spec, RngStream(4), beta0_db=0.0, d0=10.0)
    assert abs(np.mean(h)) < 3 * np.sqrt(1.0 / h.size)


def test_sample_channel_set_shapes_and_determinism():
    """Test ChannelSet shapes and bit-identical draws from the same stream"""
    cfg = SystemConfig(M=6, N=4)
    a = sample_channel_set(cfg, 0, RngStream(11))
    b = sample_channel_set(cfg, 0, RngStream(11))
    assert a.h_k1.shape == (4,) and a.D.shape == (4, 4) and a.N1.shape == (6, 4)
    for name in ("h_k1", "h_k2", "D", "N1", "N2"):
        assert np.array_equal(getattr(a, name), getattr(b, name))


def test_sample_channel_set_pure_los_is_deterministic():
    """Test infinite Rician factors on every link give a deterministic set"""
    links = {name: {"rician_factor": float("inf")} for name in ("h_k1", "h_k2", "D", "N1", "N2")}
    cfg = SystemConfig(M=4, N=3, links=links)
    a = sample_channel_set(cfg, 0, RngStream(1))
    b = sample_channel_set(cfg, 0, RngStream(2))
    assert np.array_equal(a.D, b.D) and np.array_equal(a.h_k2, b.h_k2)


def test_h_k2_energy_matches_path_loss():
    """Test E||h_k2||^2 = N beta(90 m, 2.3) over 10^4 draws"""
    cfg = SystemConfig(M=2, N=8)
    base = RngStream(21)
    energy = np.mean([np.sum(np.abs(sample_channel_set(cfg, 0, base.child(t)).h_k2) ** 2) for t in range(10_000)])
    assert abs(energy / (8 * path_loss_linear(90.0, 2.3)) - 1.0) < 0.03


def test_sample_users_are_independent():
    """Test one ChannelSet per user with distinct draws"""
    users = sample_users(SystemConfig(M=4, N=3, K=3), RngStream(2))
    assert len(users) == 3
    assert not np.array_equal(users[0].N1, users[1].N1)


def test_assemble_cascaded_collapse_cases():
    """Test algebraic collapses of the cascaded matrices"""
    cs = _channel_set()
    ones = np.ones(4, dtype=complex)
    collapsed = assemble_cascaded(ChannelSet(cs.h_k1, ones, np.eye(4, dtype=complex), cs.N1, cs.N2))
    assert np.allclose(collapsed.H3k, np.diag(cs.h_k1))
    trivial = assemble_cascaded(ChannelSet(ones, ones, np.eye(4, dtype=complex), cs.N1, cs.N2))
    assert np.array_equal(trivial.H1k, cs.N1)
    assert np.array_equal(trivial.H2k, cs.N2)
    assert np.allclose(trivial.H3k, np.eye(4))


def test_assemble_cascaded_invariants():
    """Test H1k, H2k and H3k column construction"""
    cs = _channel_set(seed=3)
    cc = assemble_cascaded(cs)
    assert np.allclose(cc.H1k, cs.N1 @ np.diag(cs.h_k1))
    assert np.allclose(cc.H2k, cs.N2 @ np.diag(cs.h_k2))
    for n in range(4):
        assert np.allclose(cc.H3k[:, n], np.linalg.solve(np.diag(cs.h_k2), cs.D[:, n] * cs.h_k1[n]))


def test_assemble_cascaded_degenerate():
    """Test a vanishing h_k2 entry is rejected"""
    cs = _channel_set()
    h_k2 = cs.h_k2.copy()
    h_k2[1] = 0.0
    with pytest.raises(DegenerateChannelError):
        assemble_cascaded(ChannelSet(cs.h_k1, h_k2, cs.D, cs.N1, cs.N2))


def test_effective_channel_off_states():
    """Test one RIS OFF leaves the other single-reflection term"""
    cs = _channel_set(seed=5)
    theta = ris_phase(np.linspace(0, 6, 4), amplitude=0.8)
    assert np.allclose(effective_channel(cs, ris_off(4), theta), cs.N2 @ (theta * cs.h_k2))
    assert np.allclose(effective_channel(cs, theta, ris_off(4)), cs.N1 @ (theta * cs.h_k1))


def test_effective_channel_forms_agree():
    """Test the constituent-link and cascaded forms of the effective channel"""
    for seed in range(100):
        cs = _channel_set(seed=seed)
        rng = np.random.default_rng(seed)
        theta1 = ris_phase(rng.uniform(0, 2 * np.pi, 4))
        theta2 = ris_phase(rng.uniform(0, 2 * np.pi, 4), amplitude=rng.uniform())
        direct = effective_channel(cs, theta1, theta2)
        cascaded = effective_channel_cascaded(assemble_cascaded(cs), theta1, theta2)
        assert np.linalg.norm(direct - cascaded) <= 1e-9 * np.linalg.norm(direct)


def test_effective_channel_shape_check():
    """Test a phase vector of the wrong length is rejected"""
    with pytest.raises(DimensionMismatchError):
        effective_channel(_channel_set(), np.ones(3), np.ones(4))


def test_ris_phase_amplitude_bound():
    """Test reflection amplitude must lie in [0, 1]"""
    assert np.all(np.abs(ris_phase(np.arange(5.0))) <= 1.0 + 1e-15)
    with pytest.raises(ConfigError):
        ris_phase(np.zeros(3), amplitude=1.5)


def test_sample_cascaded_is_reproducible():
    """Test cascaded draws repeat for the same stream"""
    cfg = SystemConfig(M=6, N=4)
    a = sample_cascaded(cfg, 0, RngStream(8))
    b = sample_cascaded(cfg, 0, RngStream(8))
    assert np.array_equal(a.H3k, b.H3k)

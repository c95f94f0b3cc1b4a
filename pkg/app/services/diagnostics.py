"""Built-in checks behind the ``selftest`` and ``gradcheck`` commands."""
import logging
from dataclasses import dataclass
from typing import Callable, Dict, List

import numpy as np

from app.models.config import NetConfig, SystemConfig
from app.nn import ops
from app.nn.gradcheck import grad_check, grad_check_tensors
from app.nn.optim import AdamState, adam_step
from app.nn.tensor import Parameter, Tensor, float64_mode
from app.services import channel_model, estimators, numerics, pilot_protocol
from app.services.sc_attention import (
    AttentionLayerParams,
    forward,
    forward_tensor,
    init_net,
    nmse_loss,
    self_attention,
)

logger = logging.getLogger(__name__)

GRADCHECK_TOLERANCE = 1e-4


@dataclass
class CheckOutcome:
    name: str
    passed: bool
    detail: str = ""


def _close(a, b, tol: float = 1e-12) -> None:
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape or not np.allclose(a, b, rtol=tol, atol=tol):
        raise AssertionError(f"expected {b!r}, got {a!r}")


def _matmul_identity():
    b = np.arange(9).reshape(3, 3) + 1j
    _close(numerics.matmul(np.eye(3), b), b)
    _close(numerics.matmul([[2 + 1j]], [[3 - 1j]]), [[7 + 1j]])


def _conj_transpose():
    _close(numerics.conj_transpose([[1j]]), [[-1j]])


def _left_pinv_identity():
    _close(numerics.left_pinv(np.eye(4)), np.eye(4))


def _solve_hermitian_scaled():
    _close(numerics.solve_hermitian(2 * np.eye(3), np.eye(3)), 0.5 * np.eye(3))


def _sample_cn_zero():
    _close(numerics.sample_cn(2, 3, 0.0, numerics.RngStream(1)), np.zeros((2, 3)))


def _fro_norm_identity():
    assert numerics.fro_norm_sq(np.eye(4)) == 4.0
    assert numerics.fro_norm_sq(np.zeros((3, 3))) == 0.0


def _path_loss_reference():
    _close(channel_model.path_loss_linear(10.0, 2.3, -15.0, 10.0), 10 ** -1.5)
    _close(channel_model.path_loss_linear(100.0, 2.0, -15.0, 10.0), 10 ** -1.5 * 1e-2)


def _cascade_collapse():
    n, m = 3, 4
    h = np.array([1.0, 2.0 - 1j, 0.5j])
    n1 = np.arange(m * n).reshape(m, n) + 0j
    cs = channel_model.ChannelSet(h_k1=h, h_k2=np.ones(n, complex), D=np.eye(n, dtype=complex), N1=n1, N2=2 * n1)
    cc = channel_model.assemble_cascaded(cs)
    _close(cc.H3k, np.diag(h))


def _ris_off_terms():
    stream = numerics.RngStream(7)
    cfg = SystemConfig(M=4, N=3)
    cs = channel_model.sample_channel_set(cfg, 0, stream)
    theta = channel_model.ris_phase(np.array([0.1, 1.0, 2.0]))
    off = channel_model.ris_off(3)
    _close(channel_model.effective_channel(cs, off, theta), cs.N2 @ (theta * cs.h_k2))
    _close(channel_model.effective_channel(cs, theta, off), cs.N1 @ (theta * cs.h_k1))


def _dft_schedule():
    _close(pilot_protocol.build_single_schedule(2, 2).phi, [[1, 1], [1, -1]])
    _close(pilot_protocol.build_single_schedule(1, 1).phi, [[1]])


def _noise_variance():
    spec = pilot_protocol.NoiseSpec
    _close(pilot_protocol.noise_variance(spec(0.0)), 1.0)
    _close(pilot_protocol.noise_variance(spec(10.0)), 0.1)
    _close(pilot_protocol.noise_variance(spec(-10.0, "receive"), 0.25), 2.5)


def _noiseless_ls():
    rng = numerics.RngStream(3)
    h = numerics.sample_cn(6, 4, 1.0, rng.child("h"))
    sched = pilot_protocol.build_single_schedule(4, 5)
    y = pilot_protocol.synthesize_single_rx(h, sched, 0.0, rng.child("w"))
    _close(estimators.ls_single(y, sched.phi), h, 1e-9)
    h2k = numerics.sample_cn(6, 4, 1.0, rng.child("h2"))
    h3k = numerics.sample_cn(4, 4, 1.0, rng.child("h3"))
    y3 = pilot_protocol.synthesize_double_rx(h2k, h3k, 0.0, rng.child("w3"))
    _close(estimators.ls_double(h2k, y3), h3k, 1e-9)


def _nmse_identities():
    h = np.array([[1.0, 2j], [3.0, -1.0]])
    assert estimators.nmse(h, h) == 0.0
    _close(estimators.nmse(np.zeros_like(h), h), 1.0)
    _close(estimators.nmse(2 * h, h), 1.0)


def _correlation_identity():
    _close(estimators.empirical_correlation([np.eye(3)]).R, np.eye(3))


def _conv_identity():
    x = Tensor(np.random.default_rng(0).standard_normal((4, 5, 1)))
    kernel = np.zeros((3, 3, 1, 1))
    kernel[1, 1, 0, 0] = 1.0
    _close(ops.conv2d(x, Tensor(kernel, dtype=x.dtype), Tensor(np.zeros(1), dtype=x.dtype)).data, x.data, 1e-6)


def _relu_cases():
    _close(ops.relu(Tensor(-np.ones(4))).data, np.zeros(4))
    _close(ops.relu(Tensor(np.arange(1.0, 5.0))).data, np.arange(1.0, 5.0))


def _softmax_constant():
    _close(ops.global_softmax(Tensor(np.full((3, 3), 2.0))).data, np.full((3, 3), 1 / 9), 1e-6)


def _adam_noop():
    p = Parameter("w", np.array([1.0, -2.0]), dtype=np.float64)
    adam_step([p], AdamState.create([p]))
    _close(p.data, [1.0, -2.0])


def _network_shape():
    net = init_net(NetConfig(channels=4, blocks=1, post_concat_channels=6), seed=0)
    out = forward(net, np.zeros((3, 4), dtype=complex))
    assert out.shape == (3, 4) and np.all(np.isfinite(out))


SELFTEST_CHECKS: Dict[str, Callable[[], None]] = {
    "matmul identity and hand product": _matmul_identity,
    "conjugate transpose": _conj_transpose,
    "left pseudo-inverse of identity": _left_pinv_identity,
    "hermitian solve of 2I": _solve_hermitian_scaled,
    "zero-variance noise": _sample_cn_zero,
    "frobenius norm": _fro_norm_identity,
    "path loss reference": _path_loss_reference,
    "cascade collapse D=I, h_k2=1": _cascade_collapse,
    "single RIS terms with the other OFF": _ris_off_terms,
    "dft schedule": _dft_schedule,
    "noise variance mapping": _noise_variance,
    "noiseless LS recovery": _noiseless_ls,
    "nmse identities": _nmse_identities,
    "correlation of identity": _correlation_identity,
    "identity convolution": _conv_identity,
    "relu": _relu_cases,
    "softmax of constant input": _softmax_constant,
    "adam with zero gradient": _adam_noop,
    "network shape contract": _network_shape,
}


def run_selftest() -> List[CheckOutcome]:
    outcomes = []
    for name, check in SELFTEST_CHECKS.items():
        try:
            check()
            outcomes.append(CheckOutcome(name, True))
        except Exception as e:
            outcomes.append(CheckOutcome(name, False, f"{type(e).__name__}: {e}"))
    return outcomes


def _weighted(out: Tensor, rng: np.random.Generator) -> Tensor:
    """sum(out * W) with fixed random W so no gradient entry is trivially zero"""
    return ops.sum_all(ops.mul(out, Tensor(rng.standard_normal(out.shape))))


def _network_gradcheck() -> float:
    rng = np.random.default_rng(11)
    cfg = NetConfig(channels=3, blocks=1, post_concat_channels=4, spatial=(4, 3))
    with float64_mode():
        net = init_net(cfg, seed=5, dtype=np.float64)
        x = Tensor(rng.standard_normal((2, 4, 3, 2)))
        label = rng.standard_normal((2, 4, 3, 2))
        return grad_check_tensors(lambda: nmse_loss(forward_tensor(net, x), label), net.parameters())


def _attention_gradcheck() -> float:
    rng = np.random.default_rng(13)
    c = 3
    weights = [rng.standard_normal((c, c)) * 0.5 if i % 2 == 0 else rng.standard_normal(c) * 0.1 for i in range(8)]
    w_out = rng.standard_normal((2, 2, 3, c))

    def fn(x, *params):
        layer = AttentionLayerParams(*params)
        return ops.sum_all(ops.mul(self_attention(x, layer), Tensor(w_out)))

    return grad_check(fn, [rng.standard_normal((2, 2, 3, c)), *weights])


def gradcheck_suite() -> Dict[str, float]:
    """Max relative gradient error per layer, all in 64-bit"""
    rng = np.random.default_rng(2023)

    def r(*shape):
        return rng.standard_normal(shape)

    away_from_zero = np.sign(r(2, 3, 4)) * (0.1 + np.abs(r(2, 3, 4)))
    label = r(2, 3, 2, 2)
    cases: Dict[str, Callable[[], float]] = {
        "add": lambda: grad_check(lambda a, b: _weighted(ops.add(a, b), np.random.default_rng(1)), [r(2, 3), r(3)]),
        "mul": lambda: grad_check(lambda a, b: _weighted(ops.mul(a, b), np.random.default_rng(2)), [r(2, 3), r(2, 3)]),
        "relu": lambda: grad_check(lambda a: _weighted(ops.relu(a), np.random.default_rng(3)), away_from_zero),
        "conv2d": lambda: grad_check(
            lambda x, k, b: _weighted(ops.conv2d(x, k, b), np.random.default_rng(4)), [r(2, 4, 3, 2), r(3, 3, 2, 3), r(3)]
        ),
        "fcl": lambda: grad_check(lambda x, w, b: _weighted(ops.fcl(x, w, b), np.random.default_rng(5)), [r(2, 3, 5), r(4, 3), r(4)]),
        "global_softmax": lambda: grad_check(lambda a: _weighted(ops.global_softmax(a), np.random.default_rng(6)), r(2, 4, 4)),
        "matmul": lambda: grad_check(lambda a, b: _weighted(ops.matmul_t(a, b), np.random.default_rng(7)), [r(2, 3, 4), r(2, 4, 5)]),
        "concat_channels": lambda: grad_check(
            lambda a, b: _weighted(ops.concat_channels(a, b), np.random.default_rng(8)), [r(2, 3, 2), r(2, 3, 4)]
        ),
        "reshape_swap": lambda: grad_check(
            lambda a: _weighted(ops.swap_last(ops.reshape(a, (2, 6, 2))), np.random.default_rng(9)), r(2, 3, 4, 1)
        ),
        "nmse_loss": lambda: grad_check(lambda p: nmse_loss(p, label), r(2, 3, 2, 2)),
        "self_attention": _attention_gradcheck,
        "sc_attention_net": _network_gradcheck,
    }
    results = {}
    for name, case in cases.items():
        results[name] = case()
        logger.debug("gradcheck %s: %.3e", name, results[name])
    return results

"""Central-difference verification of the analytic gradients recorded on a Tape."""
from typing import Callable, Sequence, Union

import numpy as np

from app.nn.tensor import Tensor, Tape, float64_mode

DEFAULT_STEP = 1e-5


def _relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom))


def grad_check_tensors(loss_fn: Callable[[], Tensor], wrt: Sequence[Tensor], step: float = DEFAULT_STEP) -> float:
    """Check d loss_fn() / d t for every tensor t in ``wrt`` (perturbed in place, then restored)"""
    for t in wrt:
        t.grad = np.zeros_like(t.data)
    with Tape() as tape:
        loss = loss_fn()
    tape.backward(loss)

    worst = 0.0
    for t in wrt:
        analytic = np.array(t.grad, copy=True)
        numeric = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        num_flat = numeric.reshape(-1)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + step
            plus = float(loss_fn().data)
            flat[i] = saved - step
            minus = float(loss_fn().data)
            flat[i] = saved
            num_flat[i] = (plus - minus) / (2.0 * step)
        worst = max(worst, _relative_error(analytic, numeric))
    return worst


def grad_check(
    fn: Callable[..., Tensor],
    point: Union[np.ndarray, Sequence[np.ndarray]],
    step: float = DEFAULT_STEP,
) -> float:
    """Max relative error between the taped gradient of a scalar function and central differences.

    ``fn`` receives one Tensor per array in ``point``; everything runs in 64-bit.
    """
    arrays = [point] if isinstance(point, np.ndarray) else list(point)
    with float64_mode():
        inputs = [Tensor(np.asarray(a, dtype=np.float64), requires_grad=True) for a in arrays]
        return grad_check_tensors(lambda: fn(*inputs), inputs, step)

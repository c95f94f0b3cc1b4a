"""SC-attention denoiser: complex packing, self-attention, the full network,
its NMSE loss and the training loop.

Layer stack: 3x3 conv + ReLU (S) -> B x [self-attention, 3x3 conv] ->
optional channel concat with S -> 3x3 conv to C2 channels -> 1x1 projection
to 2 channels (real, imaginary).
"""
import hashlib
import logging
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Dict, List, Optional

import numpy as np

from app.core.exceptions import ConfigError, DimensionMismatchError, TrainingDivergedError
from app.models.config import NetConfig, TrainConfig
from app.nn import ops
from app.nn.optim import AdamState, adam_step, uniform_init, zero_grad, zeros_init
from app.nn.tensor import Parameter, Tape, Tensor, default_dtype
from app.services.numerics import ComplexMatrix, RngStream

if TYPE_CHECKING:
    from app.services.dataset import Dataset

logger = logging.getLogger(__name__)


def pack_complex(h: np.ndarray) -> np.ndarray:
    """(..., M_t, N_t) complex -> (..., M_t, N_t, 2) real; channel 0 real, channel 1 imaginary"""
    h = np.asarray(h)
    return np.stack([h.real, h.imag], axis=-1)


def unpack_complex(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if x.shape[-1] != 2:
        raise DimensionMismatchError(f"packed tensors carry 2 channels, got {x.shape}", [x.shape])
    return x[..., 0].astype(np.float64) + 1j * x[..., 1].astype(np.float64)


@dataclass
class AttentionLayerParams:
    w_k: Parameter
    b_k: Parameter
    w_q: Parameter
    b_q: Parameter
    w_v: Parameter
    b_v: Parameter
    w_o: Parameter
    b_o: Parameter


def self_attention(x: Tensor, p: AttentionLayerParams, logit_offset: float = 0.0) -> Tensor:
    """Tokens are the M_t*N_t spatial positions; FCLs act on each token's C features.

    A = K^T Q is left unscaled and normalized with a softmax over all L^2 entries.
    """
    *lead, h, w, c = x.shape
    tokens = ops.swap_last(ops.reshape(x, (*lead, h * w, c)))  # (..., C, L)
    k = ops.fcl(tokens, p.w_k, p.b_k)
    q = ops.fcl(tokens, p.w_q, p.b_q)
    v = ops.fcl(tokens, p.w_v, p.b_v)
    logits = ops.matmul_t(ops.swap_last(k), q)  # (..., L, L)
    if logit_offset:
        logits = ops.add(logits, logit_offset)
    attention = ops.global_softmax(logits)
    mixed = ops.matmul_t(v, attention)  # (..., C, L)
    out = ops.fcl(mixed, p.w_o, p.b_o)
    return ops.reshape(ops.swap_last(out), (*lead, h, w, c))


@dataclass
class NetParams:
    """Named parameters of one SC-attention network plus its architecture"""
    config: NetConfig
    params: "OrderedDict[str, Parameter]" = field(default_factory=OrderedDict)

    def __getitem__(self, name: str) -> Parameter:
        return self.params[name]

    def parameters(self) -> List[Parameter]:
        return list(self.params.values())

    def count(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    @property
    def dtype(self) -> np.dtype:
        return next(iter(self.params.values())).dtype

    def attention(self, block: int) -> AttentionLayerParams:
        prefix = f"blocks.{block}.attn."
        return AttentionLayerParams(**{k: self.params[prefix + k] for k in
                                       ("w_k", "b_k", "w_q", "b_q", "w_v", "b_v", "w_o", "b_o")})

    def state(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.params.items()}

    def load_state(self, state: Dict[str, np.ndarray]) -> "NetParams":
        missing = set(self.params) - set(state)
        if missing:
            raise ConfigError(f"checkpoint lacks parameters: {sorted(missing)}")
        for name, p in self.params.items():
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise DimensionMismatchError(
                    f"parameter {name}: checkpoint shape {value.shape} vs network {p.shape}", [value.shape, p.shape]
                )
            p.data = np.ascontiguousarray(value, dtype=p.dtype)
        return self


def _conv(params: "OrderedDict[str, Parameter]", name: str, k: int, cin: int, cout: int, rng, dtype) -> None:
    params[f"{name}.kernel"] = uniform_init(f"{name}.kernel", (k, k, cin, cout), k * k * cin, rng, dtype)
    params[f"{name}.bias"] = zeros_init(f"{name}.bias", (cout,), dtype)


def init_net(cfg: NetConfig, seed: int = 0, dtype=None) -> NetParams:
    """Uniform(-a, a), a = sqrt(6 / fan_in) weights, zero biases"""
    dtype = np.dtype(dtype or default_dtype())
    rng = RngStream(seed).child("init").generator()
    c = cfg.channels
    params: "OrderedDict[str, Parameter]" = OrderedDict()
    _conv(params, "stem", 3, 2, c, rng, dtype)
    for b in range(cfg.blocks):
        prefix = f"blocks.{b}.attn"
        for role in ("k", "q", "v", "o"):
            params[f"{prefix}.w_{role}"] = uniform_init(f"{prefix}.w_{role}", (c, c), c, rng, dtype)
            params[f"{prefix}.b_{role}"] = zeros_init(f"{prefix}.b_{role}", (c,), dtype)
        _conv(params, f"blocks.{b}.conv", 3, c, c, rng, dtype)
    head_in = 2 * c if cfg.skip_connection else c
    if cfg.final_stage == "projection":
        _conv(params, "head", 3, head_in, cfg.post_concat_channels, rng, dtype)
        _conv(params, "proj", 1, cfg.post_concat_channels, 2, rng, dtype)
    else:
        _conv(params, "head", 3, head_in, 2, rng, dtype)
    return NetParams(config=cfg, params=params)


def expected_parameter_count(cfg: NetConfig) -> int:
    """Closed-form size of the layer list"""
    c, c2 = cfg.channels, cfg.post_concat_channels
    stem = 9 * 2 * c + c
    block = 4 * (c * c + c) + 9 * c * c + c
    head_in = 2 * c if cfg.skip_connection else c
    if cfg.final_stage == "projection":
        tail = 9 * head_in * c2 + c2 + c2 * 2 + 2
    else:
        tail = 9 * head_in * 2 + 2
    return stem + cfg.blocks * block + tail


def forward_tensor(net: NetParams, x: Tensor) -> Tensor:
    """(..., M_t, N_t, 2) -> (..., M_t, N_t, 2)"""
    cfg = net.config
    if cfg.spatial is not None and tuple(x.shape[-3:-1]) != tuple(cfg.spatial):
        raise DimensionMismatchError(
            f"network expects spatial extents {tuple(cfg.spatial)}, got {x.shape[-3:-1]}", [x.shape]
        )
    if x.shape[-1] != 2:
        raise DimensionMismatchError(f"network input must carry 2 channels, got {x.shape}", [x.shape])
    s = ops.relu(ops.conv2d(x, net["stem.kernel"], net["stem.bias"]))
    h = s
    for b in range(cfg.blocks):
        h = self_attention(h, net.attention(b))
        h = ops.conv2d(h, net[f"blocks.{b}.conv.kernel"], net[f"blocks.{b}.conv.bias"])
    if cfg.skip_connection:
        h = ops.concat_channels(h, s)
    h = ops.conv2d(h, net["head.kernel"], net["head.bias"])
    if cfg.final_stage == "projection":
        h = ops.conv2d(h, net["proj.kernel"], net["proj.bias"])
    return h


def forward(net: NetParams, y_noisy: ComplexMatrix) -> ComplexMatrix:
    x = Tensor(pack_complex(y_noisy), dtype=net.dtype)
    return unpack_complex(forward_tensor(net, x).data)


def nmse_loss(batch_pred: Tensor, batch_label: np.ndarray) -> Tensor:
    """Differentiable mean of ||H - H^||^2 / ||H||^2; gradient flows through predictions only"""
    return ops.nmse_ratio(batch_pred, batch_label)


def predict_batch(net: NetParams, noisy: np.ndarray, scale: float = 1.0, batch_size: int = 64) -> np.ndarray:
    """Denoise a complex batch (T, M_t, N_t); inputs are divided by ``scale`` and outputs multiplied back"""
    noisy = np.asarray(noisy)
    if noisy.ndim == 2:
        return predict_batch(net, noisy[np.newaxis], scale, batch_size)[0]
    packed = pack_complex(noisy / scale)
    out = np.empty(noisy.shape, dtype=np.complex128)
    for start in range(0, len(packed), batch_size):
        chunk = Tensor(packed[start:start + batch_size], dtype=net.dtype)
        out[start:start + batch_size] = unpack_complex(forward_tensor(net, chunk).data)
    return out * scale


def _per_sample_nmse(net: NetParams, inputs: np.ndarray, labels: np.ndarray, batch_size: int) -> float:
    ratios = []
    axes = (1, 2, 3)
    for start in range(0, len(inputs), batch_size):
        pred = forward_tensor(net, Tensor(inputs[start:start + batch_size], dtype=net.dtype)).data
        lab = labels[start:start + batch_size].astype(np.float64)
        ratios.append(((pred - lab) ** 2).sum(axis=axes) / (lab ** 2).sum(axis=axes))
    return float(np.concatenate(ratios).mean())


@dataclass
class EpochRecord:
    epoch: int
    train_nmse: float
    val_nmse: Optional[float]


@dataclass
class TrainResult:
    net: NetParams
    history: List[EpochRecord]
    best_epoch: int
    batch_digests: List[str]


def _batch_digest(order: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(order, dtype="<i8").tobytes()).hexdigest()[:16]


def train(
    dataset: "Dataset",
    net_cfg: NetConfig,
    train_cfg: TrainConfig,
    validation: Optional["Dataset"] = None,
    dtype=np.float32,
) -> TrainResult:
    """Seeded mini-batch Adam on the NMSE loss; keeps the best-validation parameters.

    Epoch 0 of the history is the untrained network. Both datasets are fed
    normalized by the training set's scale.
    """
    if len(dataset) == 0:
        raise ConfigError("cannot train on an empty dataset")
    if net_cfg.spatial is None:
        net_cfg = net_cfg.copy(update={"spatial": dataset.shape})
    scale = dataset.scale
    inputs, labels = dataset.packed(scale)
    val_inputs = val_labels = None
    if validation is not None and len(validation) > 0:
        val_inputs, val_labels = validation.packed(scale)

    net = init_net(net_cfg, seed=train_cfg.seed, dtype=dtype)
    params = net.parameters()
    state = AdamState.create(params, lr=train_cfg.lr, weight_decay=train_cfg.weight_decay)
    shuffle = RngStream(train_cfg.seed).child("shuffle")
    bs = train_cfg.batch_size

    def evaluate(epoch: int) -> EpochRecord:
        train_nmse = _per_sample_nmse(net, inputs, labels, bs)
        val_nmse = _per_sample_nmse(net, val_inputs, val_labels, bs) if val_inputs is not None else None
        if not math.isfinite(train_nmse):
            raise TrainingDivergedError(epoch)
        return EpochRecord(epoch, train_nmse, val_nmse)

    history = [evaluate(0)]
    best_score = history[0].val_nmse if history[0].val_nmse is not None else history[0].train_nmse
    best_state, best_epoch = net.state(), 0
    digests: List[str] = []

    for epoch in range(1, train_cfg.epochs + 1):
        order = shuffle.child(epoch).generator().permutation(len(inputs))
        digests.append(_batch_digest(order))
        for start in range(0, len(order), bs):
            idx = order[start:start + bs]
            zero_grad(params)
            with Tape() as tape:
                loss = nmse_loss(forward_tensor(net, Tensor(inputs[idx], dtype=net.dtype)), labels[idx])
            if not np.isfinite(loss.data):
                raise TrainingDivergedError(epoch)
            tape.backward(loss)
            adam_step(params, state)
        record = evaluate(epoch)
        history.append(record)
        score = record.val_nmse if record.val_nmse is not None else record.train_nmse
        if score < best_score:
            best_score, best_state, best_epoch = score, net.state(), epoch
        logger.info(
            "epoch %d/%d train_nmse=%.5f val_nmse=%s batches=%s",
            epoch, train_cfg.epochs, record.train_nmse,
            f"{record.val_nmse:.5f}" if record.val_nmse is not None else "-", digests[-1],
        )

    net.load_state(best_state)
    return TrainResult(net=net, history=history, best_epoch=best_epoch, batch_digests=digests)

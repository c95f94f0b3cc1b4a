"""Denoising datasets: noisy LS observations paired with clean cascaded channels.

Every sample is a pure function of (master seed, link, sample index), so the
raw observation of any sample can be rebuilt later without storing it.

File layout (little-endian): magic ``RISCE1\\0\\0``, u32 version, u8 link_id,
u32 M_t, u32 N_t, u64 T, f64 scale; then per sample f32 snr_db followed by
the noisy real, noisy imaginary, clean real and clean imaginary blocks, each
M_t*N_t row-major float32 values.
"""
import logging
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from app.core.config import effective_threads
from app.core.exceptions import ArtifactMissingError, ConfigError, DatasetFormatError
from app.models.config import ExperimentConfig
from app.services.channel_model import CascadedChannels, sample_cascaded
from app.services.estimators import CorrelationMatrix, empirical_correlation, ls_double, ls_single
from app.services.numerics import ComplexMatrix, RngLike, RngStream, fro_norm_sq
from app.services.pilot_protocol import (
    NoiseSpec,
    SingleLinkSchedule,
    build_single_schedule,
    noise_variance,
    synthesize_double_rx,
    synthesize_single_rx,
)

logger = logging.getLogger(__name__)

MAGIC = b"RISCE1\x00\x00"
VERSION = 1
_HEADER = struct.Struct("<8sIBIIQd")
# Correlation priors come from draws disjoint from every dataset sample
CORRELATION_SEED_OFFSET = 0x5EED_C0FF


@dataclass
class Observation:
    y: ComplexMatrix  # raw received matrix
    noisy: ComplexMatrix  # LS observation Y~
    clean: ComplexMatrix  # label H


@dataclass
class RawSample:
    index: int
    snr_db: float
    sigma2: float
    channels: CascadedChannels
    observation: Observation


@dataclass
class LinkContext:
    """Per-link constants shared by every sample of an experiment"""
    cfg: ExperimentConfig
    link_id: int
    schedule: Optional[SingleLinkSchedule]
    rx_power: Optional[float]
    _correlation: Optional[CorrelationMatrix] = field(default=None, repr=False)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.cfg.system.link_shape(self.link_id)

    def noise_shape(self) -> Tuple[int, int]:
        """Shape of the noise matrix W of the link's training phase"""
        if self.link_id == 3:
            return self.cfg.system.M, self.cfg.system.N
        return self.cfg.system.M, self.cfg.pilot_slots

    def sigma2(self, snr_db: float) -> float:
        spec = NoiseSpec(snr_db=snr_db, mode=self.cfg.snr_mode, pilot_power=self.cfg.schedule.pilot_power)
        return noise_variance(spec, self.rx_power)

    def correlation(self) -> CorrelationMatrix:
        if self._correlation is None:
            self._correlation = estimate_correlation(self.cfg, self.link_id)
        return self._correlation


def observe(link_id: int, cc: CascadedChannels, schedule: Optional[SingleLinkSchedule],
            sigma2: float, rng: RngLike) -> Observation:
    if link_id in (1, 2):
        h = cc.for_link(link_id)
        y = synthesize_single_rx(h, schedule, sigma2, rng)
        return Observation(y=y, noisy=ls_single(y, schedule.phi), clean=h)
    if link_id == 3:
        y = synthesize_double_rx(cc.H2k, cc.H3k, sigma2, rng)
        return Observation(y=y, noisy=ls_double(cc.H2k, y), clean=cc.H3k)
    raise ConfigError(f"link_id must be 1, 2 or 3, got {link_id}")


def make_noisy_observation(link_id: int, cc: CascadedChannels, schedule: Optional[SingleLinkSchedule],
                           sigma2: float, rng: RngLike) -> Tuple[ComplexMatrix, ComplexMatrix]:
    """(Y~, H): the LS observation of the link and its clean cascaded matrix"""
    obs = observe(link_id, cc, schedule, sigma2, rng)
    return obs.noisy, obs.clean


def _clean_rx(link_id: int, cc: CascadedChannels, schedule: Optional[SingleLinkSchedule]) -> ComplexMatrix:
    if link_id == 3:
        return cc.H2k @ cc.H3k
    return cc.for_link(link_id) @ schedule.phi


def calibrate_rx_power(cfg: ExperimentConfig, link_id: int,
                       schedule: Optional[SingleLinkSchedule] = None) -> float:
    """Average clean received power per entry over the calibration draws"""
    if link_id in (1, 2) and schedule is None:
        schedule = build_single_schedule(cfg.system.N, cfg.pilot_slots, link_id)
    base = RngStream(cfg.seed).child("calibration", link_id)
    total = 0.0
    for d in range(cfg.calibration_draws):
        y = _clean_rx(link_id, sample_cascaded(cfg.system, 0, base.child(d)), schedule)
        total += fro_norm_sq(y) / y.size
    power = total / cfg.calibration_draws
    logger.debug("link %d calibrated received power %.4e over %d draws", link_id, power, cfg.calibration_draws)
    return power


def link_context(cfg: ExperimentConfig, link_id: int) -> LinkContext:
    schedule = None
    if link_id in (1, 2):
        schedule = build_single_schedule(cfg.system.N, cfg.pilot_slots, link_id)
    elif link_id != 3:
        raise ConfigError(f"link_id must be 1, 2 or 3, got {link_id}")
    rx_power = calibrate_rx_power(cfg, link_id, schedule) if cfg.snr_mode == "receive" else None
    return LinkContext(cfg=cfg, link_id=link_id, schedule=schedule, rx_power=rx_power)


def estimate_correlation(cfg: ExperimentConfig, link_id: int) -> CorrelationMatrix:
    """E[H^H H] of the link from clean draws under an offset seed"""
    base = RngStream(cfg.seed + CORRELATION_SEED_OFFSET).child("correlation", link_id)
    draws = (sample_cascaded(cfg.system, 0, base.child(t)).for_link(link_id) for t in range(cfg.correlation_samples))
    return empirical_correlation(draws)


def sample_stream(cfg: ExperimentConfig, link_id: int, index: int) -> RngStream:
    return RngStream(cfg.seed).child("dataset", link_id, index)


def draw_sample(ctx: LinkContext, stream: RngStream, index: int = 0, snr_db: Optional[float] = None) -> RawSample:
    """One realization: fresh channels, an SNR from the grid (unless given) and noise"""
    grid = ctx.cfg.snr_grid_db
    if snr_db is None:
        snr_db = float(grid[int(stream.child("snr").generator().integers(len(grid)))])
    cc = sample_cascaded(ctx.cfg.system, 0, stream.child("channels"))
    sigma2 = ctx.sigma2(snr_db)
    obs = observe(ctx.link_id, cc, ctx.schedule, sigma2, stream.child("noise"))
    return RawSample(index=index, snr_db=snr_db, sigma2=sigma2, channels=cc, observation=obs)


def regenerate_sample(ctx: LinkContext, index: int) -> RawSample:
    """Rebuild dataset sample ``index`` bit-for-bit from its stream"""
    return draw_sample(ctx, sample_stream(ctx.cfg, ctx.link_id, index), index)


def regenerate_samples(ctx: LinkContext, indices: Sequence[int]) -> List[RawSample]:
    with ThreadPoolExecutor(max_workers=effective_threads()) as pool:
        return list(pool.map(lambda i: regenerate_sample(ctx, int(i)), indices))


@dataclass
class Dataset:
    link_id: int
    snr_db: np.ndarray  # (T,) float32
    noisy: np.ndarray  # (T, M_t, N_t) complex64
    clean: np.ndarray  # (T, M_t, N_t) complex64
    scale: float
    indices: np.ndarray = None  # original sample indices

    def __post_init__(self):
        if self.indices is None:
            self.indices = np.arange(len(self.snr_db))
        if self.noisy.shape != self.clean.shape or self.noisy.shape[0] != len(self.snr_db):
            raise DatasetFormatError(f"noisy {self.noisy.shape} / clean {self.clean.shape} / snr mismatch")
        if not self.scale > 0:
            raise DatasetFormatError(f"normalization scale must be > 0, got {self.scale}")

    def __len__(self) -> int:
        return len(self.snr_db)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.noisy.shape[1], self.noisy.shape[2]

    def subset(self, positions: Sequence[int]) -> "Dataset":
        positions = np.asarray(positions, dtype=np.int64)
        return Dataset(self.link_id, self.snr_db[positions], self.noisy[positions],
                       self.clean[positions], self.scale, self.indices[positions])

    def at_snr(self, snr_db: float) -> "Dataset":
        return self.subset(np.flatnonzero(np.isclose(self.snr_db, snr_db)))

    def packed(self, scale: Optional[float] = None) -> Tuple[np.ndarray, np.ndarray]:
        """Normalized real tensors (T, M_t, N_t, 2) of inputs and labels"""
        from app.services.sc_attention import pack_complex

        scale = scale or self.scale
        return pack_complex(self.noisy / scale), pack_complex(self.clean / scale)

    def _record_dtype(self) -> np.dtype:
        block = ("<f4", self.shape)
        return np.dtype([("snr", "<f4"), ("noisy_re", *block), ("noisy_im", *block),
                         ("clean_re", *block), ("clean_im", *block)])

    def write(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        records = np.empty(len(self), dtype=self._record_dtype())
        records["snr"] = self.snr_db
        records["noisy_re"], records["noisy_im"] = self.noisy.real, self.noisy.imag
        records["clean_re"], records["clean_im"] = self.clean.real, self.clean.imag
        mt, nt = self.shape
        try:
            with path.open("wb") as fh:
                fh.write(_HEADER.pack(MAGIC, VERSION, self.link_id, mt, nt, len(self), float(self.scale)))
                fh.write(records.tobytes())
        except OSError as e:
            raise DatasetFormatError(f"cannot write dataset {path}: {e}")
        logger.info("Wrote dataset %s (link %d, %d samples, scale %.4e)", path, self.link_id, len(self), self.scale)
        return path

    @classmethod
    def read(cls, path: Union[str, Path]) -> "Dataset":
        path = Path(path)
        if not path.is_file():
            raise ArtifactMissingError(path)
        try:
            raw = path.read_bytes()
        except OSError as e:
            raise DatasetFormatError(f"cannot read dataset {path}: {e}")
        if len(raw) < _HEADER.size:
            raise DatasetFormatError(f"truncated dataset header in {path}")
        magic, version, link_id, mt, nt, count, scale = _HEADER.unpack_from(raw)
        if magic != MAGIC:
            raise DatasetFormatError(f"{path} is not a dataset file")
        if version != VERSION:
            raise DatasetFormatError(f"unsupported dataset version {version} in {path}")
        probe = cls(link_id, np.zeros(1, np.float32), np.zeros((1, mt, nt), np.complex64),
                    np.zeros((1, mt, nt), np.complex64), 1.0)
        dtype = probe._record_dtype()
        body = raw[_HEADER.size:]
        if len(body) != count * dtype.itemsize:
            raise DatasetFormatError(f"{path}: expected {count} samples, payload has {len(body)} bytes")
        records = np.frombuffer(body, dtype=dtype, count=count)
        noisy = (records["noisy_re"] + 1j * records["noisy_im"]).astype(np.complex64)
        clean = (records["clean_re"] + 1j * records["clean_im"]).astype(np.complex64)
        return cls(link_id, records["snr"].astype(np.float32), noisy, clean, scale)


def split_indices(count: int, fraction: float, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """Seeded shuffle, then the first round(fraction*count) positions train"""
    if not 0.0 < fraction < 1.0:
        raise ConfigError(f"split fraction must lie in (0, 1), got {fraction}")
    order = RngStream(seed).child("split").generator().permutation(count)
    n_train = min(max(int(round(fraction * count)), 1), count - 1)
    return np.sort(order[:n_train]), np.sort(order[n_train:])


def split_dataset(ds: Dataset, fraction: float, seed: int) -> Tuple[Dataset, Dataset]:
    train_pos, val_pos = split_indices(len(ds), fraction, seed)
    return ds.subset(train_pos), ds.subset(val_pos)


def normalization_scale(clean: np.ndarray) -> float:
    """sqrt(mean ||H||_F^2 / (M_t N_t))"""
    clean = np.asarray(clean, dtype=np.complex128)
    return float(np.sqrt(np.mean(np.abs(clean) ** 2)))


def generate_dataset(cfg: ExperimentConfig, link_id: int, path: Optional[Union[str, Path]] = None) -> Dataset:
    """T samples of (Y~, H) for one link; the scale is measured on the training split"""
    ctx = link_context(cfg, link_id)
    count = cfg.samples
    logger.info("Generating %d samples for link %d (%s SNR)", count, link_id, cfg.snr_mode)

    def one(index: int) -> Tuple[float, np.ndarray, np.ndarray]:
        s = regenerate_sample(ctx, index)
        return s.snr_db, s.observation.noisy, s.observation.clean

    with ThreadPoolExecutor(max_workers=effective_threads()) as pool:
        results = list(pool.map(one, range(count)))

    snr = np.array([r[0] for r in results], dtype=np.float32)
    noisy = np.stack([r[1] for r in results]).astype(np.complex64)
    clean = np.stack([r[2] for r in results]).astype(np.complex64)
    train_pos, _ = split_indices(count, cfg.split_fraction, cfg.seed)
    ds = Dataset(link_id, snr, noisy, clean, normalization_scale(clean[train_pos]))
    if path is not None:
        ds.write(path)
    return ds

"""Experiment orchestration: dataset files, training runs, NMSE-versus-SNR
evaluation, the skip-connection ablation and the block-count residual maps.

Artifacts live under ``cfg.output_dir``::

    datasets/link{L}.risce
    checkpoints/link{L}_{variant}.risnn   variant: sc | attn | blocks{B}
    history/link{L}_{variant}.csv
    results.csv, ablation.csv, visualize/link{L}_S{B}.csv
"""
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from app.core.config import effective_threads
from app.core.exceptions import ArtifactMissingError, ConfigError
from app.models.config import DEFAULT_SNR_GRID_DB, ExperimentConfig
from app.models.results import AblationRow, ResultRow
from app.nn.checkpoint import load_checkpoint, save_checkpoint
from app.services.dataset import (
    Dataset,
    LinkContext,
    RawSample,
    draw_sample,
    generate_dataset,
    link_context,
    regenerate_samples,
    split_dataset,
    split_indices,
)
from app.services.estimators import lmmse_double, lmmse_single, ls_double, ls_single, nmse, noise_scalar
from app.services.numerics import ComplexMatrix, RngStream
from app.services.sc_attention import NetParams, TrainResult, init_net, predict_batch, train

logger = logging.getLogger(__name__)

Estimator = Callable[[RawSample, LinkContext], ComplexMatrix]

LS = "ls"
LMMSE_PAPER_TRACE = "lmmse_paper_trace"
LMMSE_PER_ENTRY = "lmmse_per_entry"
SC_ATTENTION = "sc_attention"
ATTENTION_ONLY = "attention_only"

# Network estimators and the checkpoint variant each one is loaded from
NET_ESTIMATORS: Dict[str, str] = {SC_ATTENTION: "sc", ATTENTION_ONLY: "attn"}

# Reference skip-connection ablation on the double-reflection link, full-size system
REFERENCE_ATTENTION_ONLY = dict(zip(DEFAULT_SNR_GRID_DB, [0.3842, 0.2409, 0.2590, 0.0939, 0.0522, 0.0312]))
REFERENCE_SC_ATTENTION = dict(zip(DEFAULT_SNR_GRID_DB, [0.3232, 0.2200, 0.1567, 0.0930, 0.0508, 0.0294]))

# Relative NMSE gain the skip connection must reach at the lowest SNR
IMPROVEMENT_FLOOR = 0.05


def estimate_ls(sample: RawSample, ctx: LinkContext) -> ComplexMatrix:
    y = sample.observation.y
    if ctx.link_id == 3:
        return ls_double(sample.channels.H2k, y)
    return ls_single(y, ctx.schedule.phi)


def _lmmse(convention: str) -> Estimator:
    def estimate(sample: RawSample, ctx: LinkContext) -> ComplexMatrix:
        rows, cols = ctx.noise_shape()
        theta = noise_scalar(sample.sigma2, rows, cols, convention)
        y = sample.observation.y
        if ctx.link_id == 3:
            return lmmse_double(sample.channels.H2k, y, ctx.correlation(), theta)
        return lmmse_single(y, ctx.schedule.phi, ctx.correlation(), theta)

    estimate.__name__ = f"estimate_lmmse_{convention}"
    return estimate


CLASSICAL_ESTIMATORS: Dict[str, Estimator] = {
    LS: estimate_ls,
    LMMSE_PAPER_TRACE: _lmmse("paper_trace"),
    LMMSE_PER_ENTRY: _lmmse("per_entry"),
}


def dataset_path(cfg: ExperimentConfig, link_id: int) -> Path:
    return Path(cfg.output_dir) / "datasets" / f"link{link_id}.risce"


def checkpoint_path(cfg: ExperimentConfig, link_id: int, variant: str) -> Path:
    return Path(cfg.output_dir) / "checkpoints" / f"link{link_id}_{variant}.risnn"


def history_path(cfg: ExperimentConfig, link_id: int, variant: str) -> Path:
    return Path(cfg.output_dir) / "history" / f"link{link_id}_{variant}.csv"


def variant_overrides(variant: str) -> Dict[str, Union[bool, int]]:
    """NetConfig overrides behind a checkpoint variant name"""
    if variant == "sc":
        return {"skip_connection": True}
    if variant == "attn":
        return {"skip_connection": False}
    match = re.fullmatch(r"blocks(\d+)", variant)
    if match:
        return {"skip_connection": True, "blocks": int(match.group(1))}
    raise ConfigError(f"unknown network variant '{variant}'")


def generate(cfg: ExperimentConfig, link_id: int) -> Dataset:
    return generate_dataset(cfg, link_id, dataset_path(cfg, link_id))


def load_dataset(cfg: ExperimentConfig, link_id: int) -> Dataset:
    ds = Dataset.read(dataset_path(cfg, link_id))
    if ds.link_id != link_id:
        raise ConfigError(f"{dataset_path(cfg, link_id)} holds link {ds.link_id}, expected {link_id}")
    return ds


def ensure_dataset(cfg: ExperimentConfig, link_id: int) -> Dataset:
    if dataset_path(cfg, link_id).is_file():
        return load_dataset(cfg, link_id)
    logger.info("No dataset for link %d yet, generating one", link_id)
    return generate(cfg, link_id)


def write_history(path: Path, result: TrainResult) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame([asdict(r) for r in result.history]).to_csv(path, index=False)
    return path


def train_link(cfg: ExperimentConfig, link_id: int, variant: str = "sc", dataset: Optional[Dataset] = None) -> TrainResult:
    """Train one network variant on a link's training split; saves checkpoint and history"""
    ds = dataset if dataset is not None else ensure_dataset(cfg, link_id)
    train_ds, val_ds = split_dataset(ds, cfg.split_fraction, cfg.seed)
    net_cfg = cfg.net_for_link(link_id, **variant_overrides(variant))
    logger.info(
        "Training link %d variant %s: %d train / %d val samples, %d blocks, skip=%s",
        link_id, variant, len(train_ds), len(val_ds), net_cfg.blocks, net_cfg.skip_connection,
    )
    result = train(train_ds, net_cfg, cfg.train, validation=val_ds)
    save_checkpoint(checkpoint_path(cfg, link_id, variant), result.net.parameters())
    write_history(history_path(cfg, link_id, variant), result)
    return result


def load_net(cfg: ExperimentConfig, link_id: int, variant: str) -> NetParams:
    net = init_net(cfg.net_for_link(link_id, **variant_overrides(variant)))
    return net.load_state(dict(load_checkpoint(checkpoint_path(cfg, link_id, variant))))


def _load_nets(cfg: ExperimentConfig, link_id: int, variants: Mapping[str, str]) -> Dict[str, NetParams]:
    missing = [checkpoint_path(cfg, link_id, v) for v in variants.values()
               if not checkpoint_path(cfg, link_id, v).is_file()]
    if missing:
        raise ArtifactMissingError(", ".join(map(str, missing)))
    return {name: load_net(cfg, link_id, v) for name, v in variants.items()}


def score_estimator(estimator: Estimator, samples: Sequence[RawSample], ctx: LinkContext) -> float:
    estimates = [estimator(s, ctx) for s in samples]
    return nmse(estimates, [s.observation.clean for s in samples])


def _positions_at(snr_db: np.ndarray, target: float) -> np.ndarray:
    return np.flatnonzero(np.isclose(snr_db, target))


def run_evaluation(
    cfg: ExperimentConfig,
    nets: Optional[Mapping[int, Mapping[str, NetParams]]] = None,
    extra_estimators: Optional[Mapping[str, Estimator]] = None,
    links: Optional[Sequence[int]] = None,
    write: bool = True,
) -> List[ResultRow]:
    """NMSE of every estimator at every grid SNR over each link's validation split.

    ``nets`` maps link -> {estimator name: network}; when absent the
    checkpoints written by training are loaded.
    """
    estimators = {**CLASSICAL_ESTIMATORS, **(extra_estimators or {})}
    rows: List[ResultRow] = []
    for link_id in links or cfg.links:
        ds = load_dataset(cfg, link_id)
        train_pos, val_pos = split_indices(len(ds), cfg.split_fraction, cfg.seed)
        if np.intersect1d(ds.indices[train_pos], ds.indices[val_pos]).size:
            raise ConfigError(f"link {link_id}: validation samples overlap the training split")
        val = ds.subset(val_pos)
        link_nets = dict(nets[link_id]) if nets and link_id in nets else _load_nets(cfg, link_id, NET_ESTIMATORS)

        ctx = link_context(cfg, link_id)
        ctx.correlation()
        raw = regenerate_samples(ctx, val.indices)
        predictions = {
            name: predict_batch(net, val.noisy, ds.scale, cfg.train.batch_size) for name, net in link_nets.items()
        }

        cells: List[Tuple[float, str, np.ndarray]] = []
        for snr in cfg.snr_grid_db:
            pos = _positions_at(val.snr_db, snr)
            if pos.size == 0:
                logger.warning("link %d: no validation samples at %.1f dB", link_id, snr)
                continue
            cells.extend((snr, name, pos) for name in [*estimators, *predictions])

        def score(cell: Tuple[float, str, np.ndarray]) -> ResultRow:
            snr, name, pos = cell
            if name in predictions:
                value = nmse(predictions[name][pos], val.clean[pos].astype(np.complex128))
            else:
                value = score_estimator(estimators[name], [raw[i] for i in pos], ctx)
            return ResultRow(link_id=link_id, estimator=name, snr_db=snr, nmse=value)

        with ThreadPoolExecutor(max_workers=effective_threads()) as pool:
            rows.extend(pool.map(score, cells))

    if write:
        write_results(Path(cfg.output_dir) / "results.csv", rows)
    return rows


def write_results(path: Path, rows: Sequence[ResultRow]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame([r.dict() for r in rows], columns=list(ResultRow.__fields__))
    frame.to_csv(path, index=False, encoding="utf-8")
    logger.info("Wrote %d result rows to %s", len(rows), path)
    return path


def read_results(path: Union[str, Path]) -> List[ResultRow]:
    path = Path(path)
    if not path.is_file():
        raise ArtifactMissingError(path)
    frame = pd.read_csv(path)
    return [ResultRow(**record) for record in frame.to_dict(orient="records")]


def monte_carlo_classical(cfg: ExperimentConfig, link_id: int, trials: int) -> List[ResultRow]:
    """Classical estimators on fresh draws at every grid SNR, no dataset involved"""
    ctx = link_context(cfg, link_id)
    ctx.correlation()
    base = RngStream(cfg.seed).child("monte_carlo", link_id)
    rows = []
    for k, snr in enumerate(cfg.snr_grid_db):
        samples = [draw_sample(ctx, base.child(k, t), t, snr_db=snr) for t in range(trials)]
        for name, estimator in CLASSICAL_ESTIMATORS.items():
            rows.append(ResultRow(link_id=link_id, estimator=name, snr_db=snr,
                                  nmse=score_estimator(estimator, samples, ctx)))
    return rows


@dataclass
class AblationResult:
    rows: List[AblationRow]
    digests_match: bool
    floor_met: bool


def _nmse_by_snr(net: NetParams, val: Dataset, grid: Sequence[float], batch_size: int) -> Dict[float, float]:
    pred = predict_batch(net, val.noisy, val.scale, batch_size)
    clean = val.clean.astype(np.complex128)
    out = {}
    for snr in grid:
        pos = _positions_at(val.snr_db, snr)
        if pos.size:
            out[snr] = nmse(pred[pos], clean[pos])
    return out


def ablation_rows(
    nmse_on: Mapping[float, float], nmse_off: Mapping[float, float], floor: float = IMPROVEMENT_FLOOR
) -> List[AblationRow]:
    """One row per SNR both variants were scored at, ascending; the lowest SNR row is checked against ``floor``"""
    rows = []
    for i, snr in enumerate(sorted(set(nmse_on) & set(nmse_off))):
        improvement = (nmse_off[snr] - nmse_on[snr]) / nmse_off[snr]
        rows.append(AblationRow(
            snr_db=snr,
            attention_only=nmse_off[snr],
            sc_attention=nmse_on[snr],
            improvement=improvement,
            meets_floor=i > 0 or improvement >= floor,
            reference_attention_only=REFERENCE_ATTENTION_ONLY.get(snr),
            reference_sc_attention=REFERENCE_SC_ATTENTION.get(snr),
        ))
    return rows


def run_ablation(cfg: ExperimentConfig, link_id: int = 3) -> AblationResult:
    """Skip connection on versus off, same seeds and data, with the reference values alongside"""
    ds = ensure_dataset(cfg, link_id)
    _, val = split_dataset(ds, cfg.split_fraction, cfg.seed)
    on = train_link(cfg, link_id, "sc", dataset=ds)
    off = train_link(cfg, link_id, "attn", dataset=ds)
    digests_match = on.batch_digests == off.batch_digests
    if not digests_match:
        logger.error("ablation variants saw different batch orders")

    nmse_on = _nmse_by_snr(on.net, val, cfg.snr_grid_db, cfg.train.batch_size)
    nmse_off = _nmse_by_snr(off.net, val, cfg.snr_grid_db, cfg.train.batch_size)
    rows = ablation_rows(nmse_on, nmse_off)
    floor_met = bool(rows) and rows[0].meets_floor
    if rows and not floor_met:
        logger.warning(
            "skip connection gains %.1f%% at %.1f dB, below the %.0f%% floor",
            100 * rows[0].improvement, rows[0].snr_db, 100 * IMPROVEMENT_FLOOR,
        )
    path = Path(cfg.output_dir) / "ablation.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame([r.dict() for r in rows], columns=list(AblationRow.__fields__)).to_csv(path, index=False)
    logger.info("Wrote ablation table to %s", path)
    return AblationResult(rows=rows, digests_match=digests_match, floor_met=floor_met)


def pick_sample(val: Dataset, snr_db: float) -> int:
    """First validation position at the grid SNR closest to ``snr_db``"""
    if len(val) == 0:
        raise ConfigError("no validation samples to visualize")
    levels = np.unique(val.snr_db)
    nearest = levels[np.argmin(np.abs(levels - snr_db))]
    return int(_positions_at(val.snr_db, nearest)[0])


def visualize_blocks(
    cfg: ExperimentConfig,
    block_counts: Sequence[int] = (0, 2, 4, 8),
    link_id: int = 3,
    snr_db: float = 0.0,
    nets: Optional[Mapping[int, NetParams]] = None,
) -> Dict[int, np.ndarray]:
    """|residual| magnitude grids of one held-out sample; entry 0 is the input residual |Y~ - H|"""
    ds = load_dataset(cfg, link_id)
    _, val = split_dataset(ds, cfg.split_fraction, cfg.seed)
    pos = pick_sample(val, snr_db)
    noisy = val.noisy[pos].astype(np.complex128)
    clean = val.clean[pos].astype(np.complex128)

    counts = [b for b in block_counts if b > 0]
    nets = dict(nets or {})
    pending = {f"blocks{b}": f"blocks{b}" for b in counts if b not in nets}
    if pending:
        loaded = _load_nets(cfg, link_id, pending)
        nets.update({int(name[len("blocks"):]): net for name, net in loaded.items()})

    grids = {0: np.abs(noisy - clean)} if 0 in block_counts else {}
    for b in counts:
        grids[b] = np.abs(predict_batch(nets[b], noisy, ds.scale) - clean)

    out_dir = Path(cfg.output_dir) / "visualize"
    out_dir.mkdir(parents=True, exist_ok=True)
    for b, grid in grids.items():
        pd.DataFrame(grid).to_csv(out_dir / f"link{link_id}_S{b}.csv", header=False, index=False)
    logger.info(
        "Residual maps at %.1f dB: %s", float(val.snr_db[pos]),
        ", ".join(f"S{b} mean={g.mean():.4e}" for b, g in grids.items()),
    )
    return grids

"""Command-line entry point: ``python main.py <command> [options]``."""
import argparse
import logging
import sys
from typing import List, Optional, Sequence

import pandas as pd

from app.core.config import settings
from app.core.exceptions import AppException, ConfigError
from app.core.logging import configure_logging
from app.models.config import PROFILES, ExperimentConfig, load_experiment_config
from app.services.diagnostics import GRADCHECK_TOLERANCE, gradcheck_suite, run_selftest
from app.services.experiments import (
    IMPROVEMENT_FLOOR, generate, run_ablation, run_evaluation, train_link, visualize_blocks,
)

logger = logging.getLogger(__name__)


def _block_list(text: str) -> List[int]:
    try:
        counts = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated block counts, got '{text}'")
    if not counts or any(c < 0 for c in counts):
        raise argparse.ArgumentTypeError(f"block counts must be >= 0, got '{text}'")
    return counts


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config (overrides --profile)")
    common.add_argument("--profile", choices=sorted(PROFILES), default="desk")
    common.add_argument("--seed", type=int, help="master seed override")
    common.add_argument("--out", help="output directory override")
    common.add_argument("--link", choices=["1", "2", "3", "all"], help="link to act on")
    common.add_argument("--log-level", default=None, help=f"logging level (default {settings.LOG_LEVEL})")

    parser = argparse.ArgumentParser(
        prog="risce", description="Channel estimation experiments for double-RIS aided massive MIMO"
    )
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True
    sub.add_parser("generate", parents=[common], help="write dataset files")
    train = sub.add_parser("train", parents=[common], help="train SC-attention networks")
    train.add_argument("--variant", choices=["sc", "attn", "both"], default="both",
                       help="skip connection on (sc), off (attn) or both")
    train.add_argument("--blocks", type=_block_list, help="train skip-on variants with these block counts instead")
    sub.add_parser("evaluate", parents=[common], help="NMSE versus SNR for every estimator")
    sub.add_parser("ablate", parents=[common], help="skip connection on/off comparison")
    visualize = sub.add_parser("visualize", parents=[common], help="residual maps per block count")
    visualize.add_argument("--blocks", type=_block_list, default=[0, 2, 4, 8])
    visualize.add_argument("--snr", type=float, default=0.0, help="SNR of the held-out sample, dB")
    sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient checks")
    sub.add_parser("selftest", parents=[common], help="built-in sanity checks")
    serve = sub.add_parser("serve", parents=[common], help="run the HTTP API")
    serve.add_argument("--host", default=settings.HOST)
    serve.add_argument("--port", type=int, default=settings.PORT)
    return parser


def _links(args: argparse.Namespace, cfg: ExperimentConfig, default: Optional[int] = None) -> List[int]:
    if args.link is None and default is not None:
        return [default]
    if args.link in (None, "all"):
        return list(cfg.links)
    return [int(args.link)]


def _cmd_generate(args, cfg) -> int:
    for link_id in _links(args, cfg):
        ds = generate(cfg, link_id)
        print(f"link {link_id}: {len(ds)} samples, scale {ds.scale:.6e}")
    return 0


def _cmd_train(args, cfg) -> int:
    if args.blocks:
        variants = [f"blocks{b}" for b in args.blocks if b > 0]
    else:
        variants = ["sc", "attn"] if args.variant == "both" else [args.variant]
    for link_id in _links(args, cfg):
        for variant in variants:
            result = train_link(cfg, link_id, variant)
            best = result.history[result.best_epoch]
            print(f"link {link_id} {variant}: best epoch {result.best_epoch}, val_nmse {best.val_nmse}")
    return 0


def _cmd_evaluate(args, cfg) -> int:
    rows = run_evaluation(cfg, links=_links(args, cfg))
    print(pd.DataFrame([r.dict() for r in rows]).to_string(index=False))
    return 0


def _cmd_ablate(args, cfg) -> int:
    link_id = _links(args, cfg, default=3)[0]
    result = run_ablation(cfg, link_id)
    print(pd.DataFrame([r.dict() for r in result.rows]).to_string(index=False))
    if not result.digests_match:
        print("error: the two variants saw different batch orders", file=sys.stderr)
        return 1
    if not result.floor_met:
        print(f"warning: skip connection gain below {IMPROVEMENT_FLOOR:.0%} at the lowest SNR", file=sys.stderr)
    return 0


def _cmd_visualize(args, cfg) -> int:
    link_id = _links(args, cfg, default=3)[0]
    grids = visualize_blocks(cfg, args.blocks, link_id, args.snr)
    for blocks, grid in grids.items():
        print(f"S{blocks}: mean |residual| {grid.mean():.6e}")
    return 0


def _cmd_gradcheck(args, cfg) -> int:
    errors = gradcheck_suite()
    for name, err in errors.items():
        status = "ok" if err < GRADCHECK_TOLERANCE else "FAIL"
        print(f"{name:<20} {err:.3e} {status}")
    return 0 if all(err < GRADCHECK_TOLERANCE for err in errors.values()) else 1


def _cmd_selftest(args, cfg) -> int:
    outcomes = run_selftest()
    for o in outcomes:
        print(f"{'PASS' if o.passed else 'FAIL'} {o.name}{': ' + o.detail if o.detail else ''}")
    return 0 if all(o.passed for o in outcomes) else 1


def _cmd_serve(args, cfg) -> int:
    import uvicorn

    uvicorn.run("main:app", host=args.host, port=args.port, reload=settings.DEBUG)
    return 0


HANDLERS = {
    "generate": _cmd_generate,
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "ablate": _cmd_ablate,
    "visualize": _cmd_visualize,
    "gradcheck": _cmd_gradcheck,
    "selftest": _cmd_selftest,
    "serve": _cmd_serve,
}


def cli_main(argv: Optional[Sequence[str]] = None) -> int:
    """Run one command; returns the process exit status"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    configure_logging(args.log_level)
    try:
        cfg = load_experiment_config(args.config, args.profile, seed=args.seed, output_dir=args.out)
    except ConfigError as e:
        parser.print_usage(sys.stderr)
        print(f"error: {e.detail}", file=sys.stderr)
        return 2

    try:
        return HANDLERS[args.command](args, cfg)
    except AppException as e:
        logger.debug("%s failed", args.command, exc_info=True)
        print(f"error: {e.detail}", file=sys.stderr)
        return 1

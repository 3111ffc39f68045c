"""Command line entry point: ``anysr <subcommand> ...``."""

from __future__ import annotations

import argparse
import logging
import os
import sys

from . import __version__
from .bench.evaluate import as_model, eval_bicubic, eval_model, render, write_rows
from .bench.metrics import EvalProtocol
from .bench.plotting import line_plot
from .bench.studies import bench_strategies, default_strategies, density_study, strategy_plot
from .checks import run_gradient_checks, selftest
from .imaging import load_image, save_image
from .lfr import LevelGrid
from .pipeline import TrainConfig, load_train_config, train, train_config_from_mapping
from .resample import degrade_pair, resize
from .scheduler import plan_custom

log = logging.getLogger("anysr")


def _ratios(text: str) -> list[float]:
    return [float(t) for t in text.replace(" ", "").split(",") if t]


def _common(p: argparse.ArgumentParser):
    p.add_argument("--seed", type=int, help="seed for every random choice (default 0)")
    p.add_argument("--config", help="key=value file; explicit flags override its values")
    p.add_argument("--protocol", default="luma-shave", choices=["luma-shave", "rgb-full"])
    p.add_argument("--out-csv", help="write result rows as CSV")
    p.add_argument("--out-svg", help="write a chart as SVG")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="anysr", description="Arbitrary-scale super-resolution toolkit")
    parser.add_argument("--version", action="version", version=f"anysr {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("upscale", help="upscale one PNG by any factor > 1")
    _common(p)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--scale", type=float, required=True)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--model", help="checkpoint file")
    g.add_argument("--bicubic", action="store_true", help="plain bicubic, no model")
    p.add_argument("--strategy", type=_ratios, help="per-pass ratios, e.g. 2,1.5")

    p = sub.add_parser("degrade", help="make the LR image (and HR reference) for a factor")
    _common(p)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--scale", type=float, required=True)
    p.add_argument("--ref-out", help="also write the cropped HR reference")

    p = sub.add_parser("train", help="train a model on a directory of PNGs")
    _common(p)
    p.add_argument("--dataset")
    p.add_argument("--out-dir")
    p.add_argument("--updates", type=int, help="total number of updates")
    p.add_argument("--batch-size", type=int)
    p.add_argument("--patch-size", type=int)
    p.add_argument("--lr", type=float, help="initial learning rate")
    p.add_argument("--checkpoint-every", type=int)
    p.add_argument("--level-count", type=int)
    p.add_argument("--full-size", action="store_true", help="full-size model and batch defaults")
    p.add_argument("--resume", help="checkpoint to continue from")

    p = sub.add_parser("eval", help="mean PSNR/SSIM over a dataset")
    _common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--scale", type=float, action="append", required=True, help="repeatable")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--model")
    g.add_argument("--bicubic", action="store_true")

    p = sub.add_parser("bench-strategies", help="compare recursive deployment plans")
    _common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--scale", type=float, required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--strategy", type=_ratios, action="append", help="repeatable; default: built-in set")

    p = sub.add_parser("density-study", help="PSNR across scales for models with different level counts")
    _common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", action="append", required=True, metavar="L=PATH")
    p.add_argument("--scales", type=_ratios, default=[1.1 + 0.05 * i for i in range(19)])

    p = sub.add_parser("gradcheck", help="finite-difference check of every backward pass")
    _common(p)
    p.add_argument("--tolerance", type=float, default=1e-4)

    p = sub.add_parser("selftest", help="quick built-in checks, no data needed")
    _common(p)
    return parser


def _protocol(args) -> EvalProtocol:
    return EvalProtocol.named(args.protocol)


def cmd_upscale(args) -> int:
    img = load_image(args.input)
    if not args.scale > 1.0:
        raise ValueError(f"--scale must exceed 1, got {args.scale}")
    if args.bicubic:
        if args.strategy:
            raise ValueError("--strategy needs --model")
        out = resize(img, args.scale)
    else:
        model = as_model(args.model)
        strategy = plan_custom(args.scale, args.strategy) if args.strategy else None
        out = render(img, args.scale, model, LevelGrid(model.config.level_count), strategy=strategy)
    save_image(out, args.out)
    print(f"{args.out}: {out.width}x{out.height}")
    return 0


def cmd_degrade(args) -> int:
    lr, ref = degrade_pair(load_image(args.input), args.scale)
    save_image(lr, args.out)
    if args.ref_out:
        save_image(ref, args.ref_out)
    print(f"{args.out}: {lr.width}x{lr.height}")
    return 0


def train_config(args) -> TrainConfig:
    base = TrainConfig() if args.full_size else TrainConfig.desk()
    if args.config:
        base = load_train_config(args.config, base)
    flags = {
        "dataset": args.dataset,
        "out_dir": args.out_dir,
        "total_updates": args.updates,
        "batch_size": args.batch_size,
        "patch_size": args.patch_size,
        "initial_lr": args.lr,
        "checkpoint_every": args.checkpoint_every,
        "level_count": args.level_count,
    }
    if args.seed is not None:
        flags["seed"] = args.seed
    cfg = train_config_from_mapping({k: str(v) for k, v in flags.items() if v is not None}, base)
    if not cfg.dataset and not args.resume:
        raise ValueError("--dataset (or dataset= in --config) is required")
    return cfg


def cmd_train(args) -> int:
    cfg = train_config(args)
    result = train(cfg, resume=args.resume)
    if result.rows:
        last = result.rows[-1]
        print(f"step {last[0] + 1}: loss {last[2]:.5f}")
    print(f"checkpoint: {result.checkpoint}\nlog: {result.log_path}")
    return 0


def _emit(rows, args):
    for row in rows:
        strategy = f" [{row.strategy}]" if row.strategy else ""
        print(f"{row.dataset} x{row.scale:g} {row.method}{strategy}: PSNR {row.psnr:.2f} dB, SSIM {row.ssim:.4f}")
    if args.out_csv:
        write_rows(rows, args.out_csv)


def cmd_eval(args) -> int:
    protocol = _protocol(args)
    model = None if args.bicubic else as_model(args.model)
    rows = []
    for scale in args.scale:
        if model is None:
            rows.append(eval_bicubic(args.dataset, scale, protocol))
        else:
            rows.append(eval_model(args.dataset, scale, model, protocol))
    _emit(rows, args)
    if args.out_svg:
        line_plot(
            {rows[0].method: ([r.scale for r in rows], [r.psnr for r in rows])},
            args.out_svg,
            "scale",
            "PSNR (dB)",
        )
    return 0


def cmd_bench_strategies(args) -> int:
    strategies = (
        [plan_custom(args.scale, s) for s in args.strategy] if args.strategy else default_strategies(args.scale)
    )
    rows = bench_strategies(args.dataset, args.scale, args.model, strategies, _protocol(args))
    _emit(rows, args)
    if args.out_svg:
        strategy_plot(rows, args.out_svg)
    return 0


def cmd_density_study(args) -> int:
    checkpoints = {}
    for item in args.checkpoint:
        label, sep, path = item.partition("=")
        if not sep:
            raise ValueError(f"--checkpoint expects L=PATH, got {item!r}")
        if not os.path.exists(path):
            raise FileNotFoundError(f"missing checkpoint {path}")
        checkpoints[int(label)] = path
    points = density_study(
        args.dataset, checkpoints, args.scales, _protocol(args), args.out_csv, args.out_svg
    )
    for p in points:
        print(f"L={p.level_count} x{p.scale:g}: {p.psnr:.3f} dB")
    return 0


def cmd_gradcheck(args) -> int:
    results = run_gradient_checks(args.seed or 0, args.tolerance)
    for name, res in results.items():
        status = "PASS" if res.passed else "FAIL"
        print(f"{status} {name}: max rel err {res.max_relative_error:.2e} ({res.checked} probes, {res.skipped} at kinks)")
    return 0 if all(r.passed for r in results.values()) else 1


def cmd_selftest(args) -> int:
    lines = selftest(args.seed or 0)
    for line in lines:
        print(f"{'PASS' if line.passed else 'FAIL'} {line.name}: {line.detail}")
    return 0 if all(l.passed for l in lines) else 1


COMMANDS = {
    "upscale": cmd_upscale,
    "degrade": cmd_degrade,
    "train": cmd_train,
    "eval": cmd_eval,
    "bench-strategies": cmd_bench_strategies,
    "density-study": cmd_density_study,
    "gradcheck": cmd_gradcheck,
    "selftest": cmd_selftest,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"anysr {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

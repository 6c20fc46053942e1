"""Command line: train, infer, eval, count, ablate, gradcheck, history."""
from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

import runlog
from checkpoint import load_weights, save_weights
from complexity import BENCHMARK_HR_SIZE, count_flops, padded_hr_size
from config import format_config, load_config
from errors import ConfigError, DimensionError, GlsrError
from gradcheck import CHECKS, run_gradcheck
from image_io import ImageU8, list_images, read_image, write_image
from metrics import psnr, rgb_to_y, ssim
from nn_blocks import ModelConfig, upscale
from reporting import build_run_report_html
from trainer import evaluate, format_metric, synth_dataset, train

log = logging.getLogger(__name__)

LOG_ENV = "GLSR_LOG_LEVEL"


def _hr_size(text: str) -> tuple[int, int]:
    """'1280x720' (W x H) -> (H, W)."""
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WxH, got {text!r}") from None
    if w < 1 or h < 1:
        raise argparse.ArgumentTypeError(f"size must be positive, got {text!r}")
    return h, w


def _setup_logging(verbose: int) -> None:
    if verbose >= 2:
        level = logging.DEBUG
    elif verbose == 1:
        level = logging.INFO
    else:
        level = logging.getLevelName(os.environ.get(LOG_ENV, "WARNING").upper())
        if not isinstance(level, int):
            level = logging.WARNING
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s", force=True)


def _load_folder(folder: str | Path) -> tuple[list[str], list[ImageU8]]:
    paths = list_images(folder)
    return [p.name for p in paths], [read_image(p) for p in paths]


def _write_text(path: str | None, text: str) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_train(args: argparse.Namespace) -> int:
    run = load_config(args.config)
    model_cfg, train_cfg, data_cfg = run.model, run.train, run.data
    if args.data == "synthetic":
        dataset = synth_dataset(train_cfg.seed, data_cfg.train_images, data_cfg.train_size)
        eval_names = [f"synthetic_{i:03d}" for i in range(data_cfg.eval_images)]
        eval_set = synth_dataset(train_cfg.seed + 1, data_cfg.eval_images, data_cfg.train_size)
        dataset_name = "synthetic"
    else:
        _, dataset = _load_folder(args.data)
        eval_names, eval_set = _load_folder(args.eval_dir) if args.eval_dir else ([], [])
        dataset_name = Path(args.eval_dir).name if args.eval_dir else ""
    if not dataset:
        raise ConfigError(f"no training images in {args.data}")

    report = train(model_cfg, train_cfg, dataset, eval_set, checkpoint_path=args.out, progress=not args.no_progress)
    save_weights(args.out, model_cfg, report.weights)
    report.write_csv(args.report)
    log.info("wrote %s and %s", args.out, args.report)

    final = None
    if eval_set:
        final = evaluate(report.weights, model_cfg, eval_set, names=eval_names)
        print(
            f"{model_cfg.variant}: psnr {format_metric(final.psnr)} ssim {format_metric(final.ssim)} "
            f"(nearest {format_metric(final.nearest_psnr)}, bicubic {format_metric(final.bicubic_psnr)})"
        )
    if args.html:
        cost = count_flops(model_cfg)
        Path(args.html).write_text(build_run_report_html(report, model_cfg, train_cfg, cost), encoding="utf-8")
    if args.log_db:
        runlog.init_db(args.log_db)
        run_id = runlog.record_run(
            args.log_db,
            variant=model_cfg.variant,
            channels=model_cfg.channels,
            blocks=model_cfg.num_blocks,
            scale=model_cfg.scale,
            params=report.weights.num_scalars(),
            steps=train_cfg.total_steps,
            final_loss=report.smoothed_loss(window=min(100, len(report.losses))),
            checkpoint=str(args.out),
            wall_time_s=report.wall_time_s,
        )
        for score in final.scores if final is not None else ():
            runlog.record_eval(args.log_db, run_id, dataset_name, score.name, score.psnr, score.ssim)
    return 0


def cmd_infer(args: argparse.Namespace) -> int:
    config, weights = load_weights(args.ckpt)
    lr = read_image(args.input)
    sr = upscale(lr.to_float()[None], weights, config)[0]
    out = ImageU8.from_float(sr)
    write_image(args.out, out)
    log.info("%dx%d -> %dx%d", lr.width, lr.height, out.width, out.height)
    return 0


def _eval_rows(args: argparse.Namespace) -> list[tuple[str, str, float, float]]:
    rows: list[tuple[str, str, float, float]] = []
    if args.sr_dir:
        if len(args.hr_dir) != 1:
            raise ConfigError("--sr-dir pairs with exactly one --hr-dir")
        names, hr_images = _load_folder(args.hr_dir[0])
        sr_by_name = {p.name: p for p in list_images(args.sr_dir)}
        crop = args.crop or 0
        for name, hr in zip(names, hr_images):
            if name not in sr_by_name:
                raise ConfigError(f"no SR image named {name} in {args.sr_dir}")
            sr = read_image(sr_by_name[name])
            if (sr.width, sr.height) != (hr.width, hr.height):
                raise DimensionError(f"{name}: SR is {sr.width}x{sr.height}, HR is {hr.width}x{hr.height}")
            y_sr, y_hr = rgb_to_y(sr), rgb_to_y(hr)
            rows.append((Path(args.hr_dir[0]).name, name, psnr(y_sr, y_hr, crop), ssim(y_sr, y_hr, crop)))
        return rows

    if not args.ckpt:
        raise ConfigError("eval needs --ckpt unless --sr-dir is given")
    config, weights = load_weights(args.ckpt)
    for folder in args.hr_dir:
        names, images = _load_folder(folder)
        if not images:
            continue
        result = evaluate(weights, config, images, names=names, crop=args.crop, quantize_sr=args.quantize)
        rows.extend((Path(folder).name, s.name, s.psnr, s.ssim) for s in result.scores)
        log.info("%s: psnr %.3f (bicubic %.3f, nearest %.3f)", folder, result.psnr, result.bicubic_psnr, result.nearest_psnr)
    return rows


def cmd_eval(args: argparse.Namespace) -> int:
    rows = _eval_rows(args)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["dataset", "image", "psnr", "ssim"])
    for row in rows:
        writer.writerow([row[0], row[1], format_metric(row[2]), format_metric(row[3])])
    for dataset in dict.fromkeys(r[0] for r in rows):
        mine = [r for r in rows if r[0] == dataset]
        writer.writerow([
            dataset,
            "mean",
            format_metric(float(np.mean([r[2] for r in mine]))),
            format_metric(float(np.mean([r[3] for r in mine]))),
        ])
    _write_text(args.out, buf.getvalue())
    if args.log_db:
        runlog.init_db(args.log_db)
        for dataset, image, p, s in rows:
            runlog.record_eval(args.log_db, None, dataset, image, p, s)
    return 0


def _model_from_args(args: argparse.Namespace) -> ModelConfig:
    return ModelConfig(channels=args.channels, num_blocks=args.blocks, scale=args.scale)


def _counted_hr(config: ModelConfig, hr: tuple[int, int]) -> tuple[int, int]:
    padded = padded_hr_size(config, hr)
    if padded != hr:
        log.info("counting %dx%d, the padded size the model runs for %dx%d", padded[1], padded[0], hr[1], hr[0])
    return padded


def cmd_count(args: argparse.Namespace) -> int:
    config = _model_from_args(args).ablated(
        scam=not args.no_scam, cfc=not args.no_cfc, glie=not args.no_glie
    )
    report = count_flops(config, _counted_hr(config, args.hr), flops_per_mac=args.mac_flops)
    _write_text(None, report.to_csv() if args.csv else report.to_text() + "\n")
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    base = _model_from_args(args)
    variants = [base, base.ablated(cfc=False), base.ablated(scam=False), base.ablated(glie=False)]
    lines = [f"{'variant':<12}  {'params':>10}  {'GFLOPs':>10}"]
    for config in variants:
        report = count_flops(config, _counted_hr(config, args.hr), flops_per_mac=args.mac_flops)
        lines.append(f"{config.variant:<12}  {report.params:>10,d}  {report.flops / 1e9:>10.4f}")
    _write_text(None, "\n".join(lines) + "\n")
    return 0


def cmd_show_config(args: argparse.Namespace) -> int:
    _write_text(None, format_config(load_config(args.config)))
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    names = CHECKS if args.module == "all" else (args.module,)
    failed = 0
    for name in names:
        result = run_gradcheck(name, seed=args.seed)
        status = "ok" if result.passed else "FAIL"
        print(f"{name:<10} max_rel_err={result.max_rel_error:.3e} tol={result.tolerance:.0e} "
              f"coords={result.coordinates} skipped={result.skipped} {result.seconds:.1f}s {status}")
        failed += not result.passed
    return 1 if failed else 0


def cmd_history(args: argparse.Namespace) -> int:
    if not Path(args.db).exists():
        print(f"no run log at {args.db}")
        return 0
    for r in runlog.recent_runs(args.db, args.limit):
        loss = f"{r['final_loss']:.5f}" if r["final_loss"] is not None else "N/A"
        print(f"#{r['id']:<4} {r['created_at']}  {r['variant']:<12} C={r['channels']} N={r['blocks']} "
              f"x{r['scale']}  params={r['params']:,d}  steps={r['steps']}  loss={loss}")
        for e in runlog.run_evals(args.db, r["id"]):
            print(f"      {e['dataset']}/{e['image']}: psnr {format_metric(e['psnr'])} ssim {format_metric(e['ssim'])}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_model_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--channels", type=int, required=True, help="Feature channels C (multiple of 4)")
    p.add_argument("--blocks", type=int, required=True, help="Number of blocks N")
    p.add_argument("--scale", type=int, required=True, choices=[2, 3, 4], help="Upscaling factor")
    p.add_argument("--hr", type=_hr_size, default=BENCHMARK_HR_SIZE, help="HR output size WxH (default 1280x720)")
    p.add_argument("--mac-flops", type=int, choices=[1, 2], default=2, help="FLOPs per multiply-accumulate")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="glsr", description="Global-local lightweight super-resolution")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v for INFO, -vv for DEBUG")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="Train a model from a config file")
    p.add_argument("--config", required=True, help="key=value config file")
    p.add_argument("--data", required=True, help="Folder of HR images, or 'synthetic'")
    p.add_argument("--eval-dir", default=None, help="Held-out HR folder when --data is a folder")
    p.add_argument("--out", required=True, help="Checkpoint path")
    p.add_argument("--report", required=True, help="Per-step CSV report path")
    p.add_argument("--html", default=None, help="Also write an HTML run report")
    p.add_argument("--log-db", default=None, help="Record the run in this sqlite file")
    p.add_argument("--no-progress", action="store_true", help="Disable the progress bar")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="Upscale one image")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="input", required=True, help="LR image (PPM)")
    p.add_argument("--out", required=True, help="SR image (PPM)")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="Y-channel PSNR/SSIM on HR folders")
    p.add_argument("--ckpt", default=None)
    p.add_argument("--hr-dir", action="append", required=True, help="HR folder; repeat for several datasets")
    p.add_argument("--sr-dir", default=None, help="Score pre-computed SR images instead of running a model")
    p.add_argument("--crop", type=int, default=None, help="Border crop in pixels (default: the scale)")
    p.add_argument("--quantize", action="store_true", help="Round SR to 8 bits before scoring")
    p.add_argument("--out", default=None, help="CSV path (default: stdout)")
    p.add_argument("--log-db", default=None, help="Record scores in this sqlite file")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("count", help="Parameters and FLOPs of one configuration")
    _add_model_args(p)
    p.add_argument("--no-scam", action="store_true")
    p.add_argument("--no-cfc", action="store_true")
    p.add_argument("--no-glie", action="store_true")
    p.add_argument("--csv", action="store_true", help="Per-layer CSV instead of a table")
    p.set_defaults(func=cmd_count)

    p = sub.add_parser("ablate", help="Parameters and FLOPs of the full model and each ablation")
    _add_model_args(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", help="Compare analytic gradients to finite differences")
    p.add_argument("--module", choices=("all",) + CHECKS, default="all")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("show-config", help="Print a config file with every default filled in")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_show_config)

    p = sub.add_parser("history", help="List recorded runs")
    p.add_argument("--db", default=str(runlog.DB_PATH))
    p.add_argument("--limit", type=int, default=20)
    p.set_defaults(func=cmd_history)
    return parser


def cli(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    _setup_logging(args.verbose)
    try:
        return args.func(args)
    except (GlsrError, OSError) as e:
        log.debug("command failed", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(cli())

"""Command-line front end.

Subcommands: ingest, train, genmasks, eval, ablate, grid. Exit codes: 0 on
success, 2 for configuration/usage problems, 1 for runtime failures. Every
report-producing path also renders its matplotlib figures next to the
delimited output so a run directory stands on its own.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np
import torch

from .config import load_train_config
from .data import ingest, load_corpus
from .errors import ConfigurationError
from .eval import PRE_ERROR_UNIT, emit_grid, evaluate_model, load_model, naive_blend
from .figures import plot_coverage_hist, plot_loss_curves, plot_pre_error_bins
from .masks import MaskKind, MaskSpec, coverage, generate_mask, save_masks
from .training import Trainer

__all__ = ["main"]


def _parse_overrides(pairs) -> dict[str, str]:
    out = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ConfigurationError(f"--set expects key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def cmd_ingest(args) -> int:
    cache = args.cache or os.environ.get("ASYMVQ_CACHE") or "cache"
    manifest = ingest(args.data, args.image_size, cache)
    print(manifest)
    return 0


def cmd_train(args) -> int:
    overrides = _parse_overrides(args.set)
    cfg = load_train_config(args.config, overrides)
    trainer = Trainer(cfg)
    final = trainer.train()
    out = Path(cfg.out_dir)
    plot_loss_curves(out / "loss_log.csv", out / "loss_curves.png")
    print(final)
    return 0


_KINDS = {
    "mixed": MaskKind.MIXED,
    "irregular": MaskKind.RANDOM_IRREGULAR,
    "box": MaskKind.RANDOM_BOX,
}


def cmd_genmasks(args) -> int:
    if args.kind not in _KINDS:
        raise ConfigurationError(f"kind must be one of {sorted(_KINDS)}")
    if not 0.0 <= args.coverage_lo < args.coverage_hi <= 1.0:
        raise ConfigurationError("need 0 <= coverage-lo < coverage-hi <= 1")
    spec = MaskSpec(kind=_KINDS[args.kind], coverage_range=(args.coverage_lo, args.coverage_hi))
    masks, flagged = [], 0
    for i in range(args.count):
        rng = np.random.default_rng(np.random.SeedSequence([args.seed, i]))
        m, missed = generate_mask(spec, args.image_size, args.image_size, rng)
        masks.append(m)
        flagged += int(missed)
    manifest = save_masks(masks, args.out)
    plot_coverage_hist([coverage(m) for m in masks], Path(args.out) / "coverage_hist.png")
    if flagged:
        print(f"warning: {flagged}/{args.count} masks missed the coverage range", file=sys.stderr)
    print(manifest)
    return 0


def cmd_eval(args) -> int:
    condition = not args.no_condition
    report = evaluate_model(args.ckpt, args.data, args.masks, condition=condition)
    out = Path(args.out)
    paths = report.save(out)
    plot_pre_error_bins(report, out / "pre_error_bins.png",
                        labels=["conditioned" if condition else "unconditional"])
    plot_coverage_hist([r["coverage"] for r in report.records], out / "coverage_hist.png")
    print(report.to_table())
    for p in paths.values():
        print(p)
    return 0


def _ablation_lines(reports: dict) -> tuple[str, str]:
    header = f"{'blend':>13} {'n':>5} {'Pre_error(x1e-5)':>17} {'PSNR(dB)':>9} {'MAE':>8}"
    text = [header, "-" * len(header)]
    csv_lines = ["blend,count,pre_error,psnr,mae"]
    for label, rep in reports.items():
        o = rep.aggregates()["overall"]
        pre = "-" if o["pre_error"] is None else f"{o['pre_error'] / PRE_ERROR_UNIT:.1f}"
        text.append(f"{label:>13} {o['count']:>5} {pre:>17} {o['psnr']:>9.2f} {o['mae']:>8.4f}")
        pre_csv = "" if o["pre_error"] is None else repr(o["pre_error"])
        csv_lines.append(f"{label},{o['count']},{pre_csv},{o['psnr']!r},{o['mae']!r}")
    return "\n".join(text) + "\n", "\n".join(csv_lines) + "\n"


def cmd_ablate(args) -> int:
    overrides = _parse_overrides(args.set)
    out = Path(args.out)
    reports = {}
    for blend in ("addition", "concatenation"):
        run_overrides = dict(overrides)
        run_overrides.update(
            stage="1",
            blend_mode=blend,
            base_checkpoint=str(args.base),
            out_dir=str(out / blend),
        )
        cfg = load_train_config(args.config, run_overrides)
        ckpt = Trainer(cfg).train()
        plot_loss_curves(out / blend / "loss_log.csv", out / blend / "loss_curves.png")
        reports[blend] = evaluate_model(ckpt, args.data, args.masks, condition=True)
    table, csv_text = _ablation_lines(reports)
    out.mkdir(parents=True, exist_ok=True)
    (out / "ablation.txt").write_text(table)
    (out / "ablation.csv").write_text(csv_text)
    plot_pre_error_bins(list(reports.values()), out / "ablation_bins.png", labels=list(reports))
    print(table)
    print(out / "ablation.txt")
    return 0


def cmd_grid(args) -> int:
    from .eval import _load_masks, _reconstruct  # reuse the eval plumbing

    models, cfg = load_model(args.ckpt)
    condition = not args.no_condition
    if condition and "cond_branch" not in models:
        raise ConfigurationError(
            "conditional decoding requires a checkpoint with a condition branch (trained at stage 1)"
        )
    images, _ = load_corpus(args.data)
    raw_masks = _load_masks(args.masks)
    rows = []
    with torch.no_grad():
        for i in range(min(args.rows, images.shape[0])):
            x = images[i : i + 1]
            m = torch.from_numpy(raw_masks[i % len(raw_masks)].astype("float32"))[None, None]
            x_hat = _reconstruct(models, cfg, x, m, condition)
            rows.append([x[0], (x * (1.0 - m))[0], x_hat[0], naive_blend(x, x_hat, m[0])[0]])
    path = emit_grid(rows, args.out)
    print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="asymvq", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="normalize an image directory into a PNG cache")
    p.add_argument("--data", required=True)
    p.add_argument("--image-size", type=int, required=True)
    p.add_argument("--cache", default=None, help="cache dir (default: $ASYMVQ_CACHE or ./cache)")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="run a training stage from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config key (repeatable)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("genmasks", help="generate a mask corpus with a coverage manifest")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--image-size", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--kind", default="mixed", choices=sorted(_KINDS))
    p.add_argument("--coverage-lo", type=float, default=0.1)
    p.add_argument("--coverage-hi", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_genmasks)

    p = sub.add_parser("eval", help="score a checkpoint on (image, mask) pairs")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--masks", required=True)
    p.add_argument("--out", required=True)
    group = p.add_mutually_exclusive_group()
    group.add_argument("--with-condition", action="store_true", default=True,
                       help="decode with the mask-conditioned branch (default)")
    group.add_argument("--no-condition", action="store_true",
                       help="decode unconditionally from the latent alone")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train and compare both blend modes from one base")
    p.add_argument("--base", required=True, help="stage-0 checkpoint")
    p.add_argument("--config", required=True, help="stage-1 training config")
    p.add_argument("--data", required=True)
    p.add_argument("--masks", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("grid", help="render input/masked/output/blend sample panels")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--masks", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--rows", type=int, default=4)
    group = p.add_mutually_exclusive_group()
    group.add_argument("--with-condition", action="store_true", default=True)
    group.add_argument("--no-condition", action="store_true")
    p.set_defaults(func=cmd_grid)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failures: bad files, NaN aborts, I/O
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())

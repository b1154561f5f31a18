"""Command-line entry point: ``ssmzsl <subcommand> ...``.

Exit codes: 0 success, 1 validation failure, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import checks, plotting
from .config import TrainConfig, load_config
from .data import gen_synthetic, load_dataset, save_dataset
from .train import NumericalError, evaluate, load_model, save_run, sweep, train

log = logging.getLogger("ssmzsl")


def _base_config(args, base: TrainConfig | None = None) -> TrainConfig:
    cfg = load_config(args.config, base) if args.config else (base or TrainConfig())
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def _out(args, default: str) -> Path:
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen_data(args) -> int:
    data, split = gen_synthetic(num_classes=args.classes, num_seen=args.seen,
                                num_attributes=args.attributes, embed_dim=args.embed_dim,
                                image_size=args.image_size, images_per_class=args.images_per_class,
                                noise=args.noise, seed=args.seed or 0, test_fraction=args.test_fraction)
    out = save_dataset(data, split, args.out or "data")
    print(f"wrote {len(data)} images, {data.semantic.class_count} classes "
          f"({len(split.seen_classes)} seen / {len(split.unseen_classes)} unseen) to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _base_config(args)
    if args.lambda_sc is not None:
        cfg = dataclasses.replace(cfg, lambda_sc=args.lambda_sc)
    if args.epochs is not None:
        cfg = dataclasses.replace(cfg, epochs=args.epochs)
    cfg.validate()
    data, split = load_dataset(args.data)
    model, history = train(data, split, cfg)
    out = save_run(_out(args, "run"), model, history, cfg)
    plotting.plot_losses(history, out / "loss_curve.png")
    last = history[-1] if history else None
    if last:
        print(f"epoch {last.epoch}: ce {last.ce:.4f}  sc {last.sc:.4f}  total {last.total:.4f}")
    print(f"checkpoint written to {out / 'checkpoint.zmba'}")
    return 0


def cmd_eval(args) -> int:
    cfg = _base_config(args)
    lam = cfg.lambda_col if args.lambda_col is None else args.lambda_col
    data, split = load_dataset(args.data)
    model = load_model(args.checkpoint)
    metrics = evaluate(model, data, split, args.mode, lam)
    out = _out(args, str(Path(args.checkpoint).parent if Path(args.checkpoint).is_file() else args.checkpoint))
    (out / "metrics.json").write_text(json.dumps(metrics.to_json(), indent=1))
    print(f"{args.mode}: {metrics.summary()}")
    return 0


def cmd_sweep(args) -> int:
    grid = [float(v) for v in args.grid.split(",") if v.strip()]
    data, split = load_dataset(args.data)
    model = load_model(args.checkpoint)
    rows = sweep(model, data, split, grid)
    out = _out(args, "sweep")
    with open(out / "sweep.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["lambda_col", "s", "u", "h"])
        writer.writerows([[repr(v) for v in row] for row in rows])
    plotting.plot_sweep(rows, out / "sweep.png")
    best = max(rows, key=lambda r: r[3])
    print(f"best H {best[3]:.1f} at lambda_col={best[0]:g} (S {best[1]:.1f}, U {best[2]:.1f})")
    return 0


def cmd_gradcheck(args) -> int:
    base = TrainConfig(encoder=checks.GRADCHECK_ENCODER)
    cfg = _base_config(args, base)
    report = checks.gradcheck(cfg.encoder, seed=cfg.seed)
    for name, err in report.errors.items():
        flag = "" if err < report.tolerance else "  FAIL"
        print(f"{err:10.3e}  {name}{flag}")
    print(f"max relative error {report.max_error:.3e} (tolerance {report.tolerance:g})")
    if args.out:
        (_out(args, ".") / "gradcheck.json").write_text(json.dumps(report.to_json(), indent=1))
    return 0 if report.passed else 2


def cmd_scan_equiv(args) -> int:
    report = checks.scan_equiv(args.trials, args.max_len, args.seed or 0)
    print(f"{report.trials} trials, L <= {report.max_len}: max |y_rec - y_conv| = "
          f"{report.max_deviation:.3e} in {report.seconds:.2f}s -> {'pass' if report.passed else 'FAIL'}")
    if args.out:
        (_out(args, ".") / "scan_equiv.json").write_text(json.dumps(report.to_json(), indent=1))
    return 0 if report.passed else 2


def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", help="key = value configuration file")
    shared.add_argument("--seed", type=int, default=None)
    shared.add_argument("--out", help="output directory")
    shared.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="ssmzsl",
                                     description="Zero-shot learning with a selective-scan image encoder.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[shared], help="generate a synthetic attribute dataset")
    p.add_argument("--classes", type=int, default=20)
    p.add_argument("--seen", type=int, default=15)
    p.add_argument("--attributes", type=int, default=12)
    p.add_argument("--embed-dim", type=int, default=16)
    p.add_argument("--image-size", type=int, default=32)
    p.add_argument("--images-per-class", type=int, default=30)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", parents=[shared], help="train a model on a dataset archive")
    p.add_argument("--data", required=True)
    p.add_argument("--lambda-sc", type=float)
    p.add_argument("--epochs", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[shared], help="CZSL or GZSL evaluation")
    p.add_argument("--checkpoint", required=True, help="run directory or checkpoint.zmba")
    p.add_argument("--data", required=True)
    p.add_argument("--mode", choices=("czsl", "gzsl"), default="gzsl")
    p.add_argument("--lambda-col", type=float)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", parents=[shared], help="GZSL calibration sweep")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--grid", default=",".join(f"{0.05 * i:.2f}" for i in range(21)))
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gradcheck", parents=[shared], help="finite-difference check of the full loss")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("scan-equiv", parents=[shared], help="recurrence vs convolution equivalence")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--max-len", type=int, default=64)
    p.set_defaults(func=cmd_scan_equiv)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except (ValueError, FileNotFoundError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

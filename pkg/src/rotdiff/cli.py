"""Command line entry point: gen-data, train, eval, denoise.

Exit codes: 0 success, 2 invalid arguments, 3 I/O failure, 4 numerical
blowup.  Every flag of every subcommand can also be supplied through a
plain key-value text file named with ``--config FILE``; explicit flags
win over file entries.  File syntax: one ``key value`` pair per line
(keys use the long flag name without the leading dashes), blank lines
and ``#`` comments ignored.
"""

import argparse
import os
import sys

from .blocks import NumericalBlowupError
from .dataset import DatasetSpec, SceneSpec, build_datasets
from .evaluate import baseline_sweep, denoise, emit_report, evaluate_sweep, merge_reports
from .training import DEFAULT_SIGMAS, TrainConfig, train

__all__ = ["main"]

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_BLOWUP = 4


def _read_config_file(path):
    entries = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition(" ")
            if not value:
                raise ValueError(f"{path}:{lineno}: expected 'key value', got {line!r}")
            entries[key.replace("-", "_")] = value.strip()
    return entries


def _apply_config_file(args, argv):
    """Fill options from --config; flags given on the command line win."""
    if not getattr(args, "config", None):
        return args
    given = set()
    for token in argv:
        if token.startswith("--"):
            given.add(token[2:].split("=", 1)[0].replace("-", "_"))
    entries = _read_config_file(args.config)
    for key, text in entries.items():
        if not hasattr(args, key) or key in ("config", "func", "command"):
            raise ValueError(f"{args.config}: unknown option {key!r}")
        if key in given:
            continue
        current = getattr(args, key)
        if isinstance(current, bool):
            value = text.lower() in ("1", "true", "yes")
        elif isinstance(current, int):
            value = int(text)
        elif isinstance(current, float):
            value = float(text)
        else:
            value = text
        setattr(args, key, value)
    return args


def _angle_list(text):
    return tuple(float(tok) for tok in text.split(",") if tok)


def _ensure_parent(path):
    # the atomic writers require the target directory to exist; create
    # it here so 'train --out models/x.ckpt' works in a fresh tree
    parent = os.path.dirname(str(path))
    if parent:
        os.makedirs(parent, exist_ok=True)


def _cmd_gen_data(args):
    scene = SceneSpec(
        size=args.size,
        rect_w=args.rect_w,
        rect_h=args.rect_h,
        count=args.rect_count,
    )
    spec = DatasetSpec(
        scene=scene,
        train_angle=args.train_angle,
        sigma=args.sigma,
        seed=args.seed,
        train_count=args.train_count,
        test_count=args.test_count,
        test_angles=_angle_list(args.test_angles),
    )
    manifest = build_datasets(args.out, spec)
    print(f"wrote {manifest}")
    return EXIT_OK


def _cmd_train(args):
    cfg = TrainConfig(
        variant=args.model,
        backend=args.backend,
        alpha=args.alpha,
        gamma=args.gamma,
        sigmas=DEFAULT_SIGMAS,
        epochs=args.epochs,
        lr=args.lr,
        batch_size=args.batch_size,
        steps=args.steps,
        seed=args.seed,
        init_tau=args.init_tau,
        init_contrast=args.init_contrast,
        label=args.label,
        workers=args.workers,
    )
    manifest = f"{args.data}/manifest.txt"
    progress = None
    if not args.quiet:
        progress = lambda epoch, loss: print(
            f"epoch {epoch}/{cfg.epochs} loss {loss:.6g}", flush=True
        )
    _ensure_parent(args.out)
    if args.loss_log:
        _ensure_parent(args.loss_log)
    train(cfg, manifest, args.out, loss_log_path=args.loss_log, resume=args.resume, progress=progress)
    print(f"wrote {args.out}")
    return EXIT_OK


def _cmd_eval(args):
    manifest = f"{args.data}/manifest.txt"
    reports = [evaluate_sweep(ckpt, manifest) for ckpt in args.ckpt]
    if args.baseline:
        reports.append(baseline_sweep(manifest))
    _ensure_parent(args.out)
    emit_report(merge_reports(reports), args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


def _cmd_denoise(args):
    _ensure_parent(args.out)
    denoise(args.ckpt, getattr(args, "in"), args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="rotdiff",
        description="Coupled multiscale diffusion blocks: data, training, evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="render the oriented-rectangle dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--train-angle", type=float, default=30.0)
    p.add_argument("--sigma", type=float, default=60.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=256)
    p.add_argument("--rect-w", type=float, default=140.0)
    p.add_argument("--rect-h", type=float, default=70.0)
    p.add_argument("--rect-count", type=int, default=20)
    p.add_argument("--train-count", type=int, default=100)
    p.add_argument("--test-count", type=int, default=50)
    p.add_argument(
        "--test-angles",
        default=",".join(f"{a:g}" for a in range(5, 90, 5)),
        help="comma-separated degrees, none axis-aligned",
    )
    p.add_argument("--config", help="key-value defaults file")
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="train one model on a dataset")
    p.add_argument("--data", required=True, help="dataset directory (with manifest.txt)")
    p.add_argument("--model", choices=("uncoupled", "iso", "aniso"), default="iso")
    p.add_argument("--backend", choices=("adjoint", "stencil"), default="stencil")
    p.add_argument("--alpha", type=float, default=0.41)
    p.add_argument("--gamma", type=float, default=0.0)
    p.add_argument("--epochs", type=int, default=250)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=0, help="0 = full batch")
    p.add_argument("--steps", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--init-tau", type=float, default=0.1)
    p.add_argument("--init-contrast", type=float, default=30.0)
    p.add_argument("--label", default="")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--loss-log", default=None, help="CSV path (default: <out>.loss.csv)")
    p.add_argument("--resume", action="store_true")
    p.add_argument("--quiet", action="store_true")
    p.add_argument("--config", help="key-value defaults file")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="rotation sweep of trained checkpoints")
    p.add_argument("--ckpt", required=True, action="append", help="repeatable")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="report CSV path")
    p.add_argument("--baseline", action="store_true", help="add the noisy-input rows")
    p.add_argument("--config", help="key-value defaults file")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("denoise", help="apply a trained model to one PGM image")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", required=True, dest="in")
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="key-value defaults file")
    p.set_defaults(func=_cmd_denoise)
    return parser


def main(argv=None):
    if argv is None:
        argv = sys.argv[1:]
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args = _apply_config_file(args, argv)
        return args.func(args)
    except (ValueError, KeyError) as exc:
        print(f"rotdiff: invalid arguments: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"rotdiff: i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NumericalBlowupError as exc:
        print(f"rotdiff: numerical blowup: {exc}", file=sys.stderr)
        return EXIT_BLOWUP


if __name__ == "__main__":
    sys.exit(main())

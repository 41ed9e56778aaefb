"""Command line entry point: gen-data, mask, train, reconstruct, evaluate.

Exit codes: 0 success, 1 usage error, 2 data/validation error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; route it to our usage code instead
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _gen_data(args) -> None:
    from .data import generate_dataset, ingest_images
    if args.from_images:
        paths = []
        for p in args.from_images:
            p = Path(p)
            paths.extend(sorted(q for q in p.iterdir() if q.suffix.lower() in (".pgm", ".ktsr"))
                         if p.is_dir() else [p])
        out = ingest_images(paths, args.out, args.rate, args.center_fraction, args.mask_seed,
                            args.mask_mode)
    else:
        if args.count is None or args.size is None:
            raise UsageError("gen-data: --count and --size are required without --from")
        out = generate_dataset(args.out, args.count, args.size, args.seed, args.rate,
                               args.center_fraction, args.mask_seed, args.mask_mode,
                               args.phase, (args.min_ellipses, args.max_ellipses))
    print(f"wrote dataset to {out}")


def _mask(args) -> None:
    from .data import save_mask
    from .kspace import make_mask
    m = make_mask(args.size, args.size, args.rate, args.center_fraction, args.seed, args.mode)
    save_mask(args.out, m)
    print(f"wrote {args.size}x{args.size} mask with {m.count} samples to {args.out}")


def _train(args) -> None:
    from .plotting import plot_losses
    from .train import TrainConfig, read_loss_log, train
    overrides = {}
    if args.data:
        overrides["data"] = args.data
    if args.steps:
        overrides["total_steps"] = args.steps
    config = TrainConfig.from_file(args.config, **overrides)
    state = train(config, args.out, resume=args.resume)
    out = Path(args.out)
    plot_losses(read_loss_log(out / "loss_log.tsv"), out / "loss_curves.png")
    print(f"trained to step {state.step}; checkpoint {out / 'final'}")


def _reconstruct(args) -> None:
    from .evaluate import reconstruct
    recon = reconstruct(args.ckpt, args.input, args.out)
    print(f"reconstructed {len(recon)} image(s) into {args.out}")


def _evaluate(args) -> None:
    from .evaluate import evaluate
    evaluate(args.ckpt, args.data, args.out, split=args.split, figures=not args.no_figures)
    print((Path(args.out) / "report.txt").read_text(), end="")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mrirecon", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="synthesize a phantom dataset or ingest images")
    g.add_argument("--count", type=int)
    g.add_argument("--size", type=int)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--from", dest="from_images", nargs="+", metavar="PATH",
                   help="PGM/KTSR files or directories to ingest instead of phantoms")
    g.add_argument("--rate", type=float, default=0.125)
    g.add_argument("--center-fraction", type=float, default=0.04)
    g.add_argument("--mask-seed", type=int, default=0)
    g.add_argument("--mask-mode", choices=("point", "line"), default="point")
    g.add_argument("--phase", action="store_true", help="add a smooth synthetic phase")
    g.add_argument("--min-ellipses", type=int, default=5)
    g.add_argument("--max-ellipses", type=int, default=12)
    g.set_defaults(func=_gen_data)

    m = sub.add_parser("mask", help="write a sampling mask")
    m.add_argument("--size", type=int, required=True)
    m.add_argument("--rate", type=float, default=0.125)
    m.add_argument("--center-fraction", type=float, default=0.04)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--mode", choices=("point", "line"), default="point")
    m.add_argument("--out", required=True)
    m.set_defaults(func=_mask)

    t = sub.add_parser("train", help="adversarial training")
    t.add_argument("--config", required=True, help="key = value config file")
    t.add_argument("--out", required=True)
    t.add_argument("--resume", help="checkpoint directory to continue from")
    t.add_argument("--data", help="override the dataset path in the config")
    t.add_argument("--steps", type=int, help="override total_steps")
    t.set_defaults(func=_train)

    r = sub.add_parser("reconstruct", help="run a trained generator")
    r.add_argument("--ckpt", required=True)
    r.add_argument("--in", dest="input", required=True,
                   help="dataset directory or KTSR zero-filled tensor (2xHxW or Nx2xHxW)")
    r.add_argument("--out", required=True)
    r.set_defaults(func=_reconstruct)

    e = sub.add_parser("evaluate", help="score a checkpoint against the zero-filled baseline")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--split", choices=("test", "all"), default="test")
    e.add_argument("--no-figures", action="store_true")
    e.set_defaults(func=_evaluate)
    return p


def main(argv=None) -> int:
    from .io import FormatError
    from .train import ConfigError, NumericalError
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(message)s")
    try:
        args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, FormatError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

"""Command line entry point: ``percept-embed {fetch,gen-lander,run,report,verify}``.

Exit codes: 0 success, 1 config error, 2 cell failure, 3 verification failure.
"""
from __future__ import annotations

import argparse
import logging
import os
import subprocess
import sys
from dataclasses import replace
from pathlib import Path

from .config import ConfigError, desk_matrix, load_matrix, paper_matrix
from .experiment import ReportError

EXIT_OK, EXIT_CONFIG, EXIT_CELL, EXIT_VERIFY = 0, 1, 2, 3


def _matrix(args):
    if args.config:
        m = load_matrix(args.config, args.profile)
    else:
        m = desk_matrix() if (args.profile or "desk") == "desk" else paper_matrix()
    if args.seed is not None:
        m = replace(m, seeds=(args.seed,))
    if args.data_root:
        m = replace(m, data_root=str(args.data_root))
    return m


def cmd_fetch(args) -> int:
    from .datasets import fetch_dataset

    for name in args.names:
        path = fetch_dataset(name, args.data_root)
        print(f"{name}: {path}")
    return EXIT_OK


def cmd_gen_lander(args) -> int:
    from .datasets import generate_lander_collection, write_lander_collection

    m = _matrix(args)
    bundle = generate_lander_collection(m.lander, args.seed or 0)
    out = Path(args.out or "lander")
    write_lander_collection(bundle, out)
    a, p, t = bundle.sizes()
    print(f"wrote {out}: autoencoder {a}, predictor {p}, test {t}, "
          f"removed {bundle.meta['removed_fraction']:.1%} of second-half frames")
    return EXIT_OK


def cmd_run(args) -> int:
    from .experiment import report, run_matrix

    m = _matrix(args)
    out = Path(args.out or "results")
    summary = run_matrix(m, out, jobs=args.jobs)
    print(f"completed {len(summary.completed)}, skipped {len(summary.skipped)}, failed {len(summary.failed)}")
    if summary.completed or summary.skipped:
        try:
            report(out)
        except ValueError as exc:  # incomplete tables, e.g. while cells are failing
            print(f"tables not written: {exc}", file=sys.stderr)
    return EXIT_CELL if summary.failed else EXIT_OK


def cmd_report(args) -> int:
    from .experiment import report

    for p in report(Path(args.out or "results")):
        print(p)
    return EXIT_OK


def self_checks() -> list[tuple[str, bool]]:
    """Quick analytic checks that need no data or training."""
    import math

    import numpy as np

    from .losses import elementwise_loss, kl_loss
    from .perceptual import extract_features, random_extractor
    from .predictors import enumerate_mlp_grid
    from .datasets import svhn_tile

    stripes = np.tile((np.arange(16) % 2).astype(np.float64), (3, 16, 1))
    shifted = np.roll(stripes, 1, axis=2)
    ext = random_extractor(0)
    x = np.random.default_rng(0).random((3, 32, 32))
    return [
        ("stripe shift loss 1.0", float(elementwise_loss(stripes, shifted)) == 1.0),
        ("constant gray loss 0.25", float(elementwise_loss(stripes, np.full_like(stripes, 0.5))) == 0.25),
        ("kl closed form", abs(float(kl_loss(np.zeros(1), np.ones(1))) - 0.5 * (math.e - 2)) < 1e-9),
        ("36 grid configs", len(enumerate_mlp_grid()) == 36),
        ("extractor 64 -> 192x7x7", tuple(extract_features(ext, np.zeros((3, 64, 64), np.float32)).shape)
         == (192, 7, 7)),
        ("extractor 96 -> 192x11x11", tuple(extract_features(ext, np.zeros((3, 96, 96), np.float32)).shape)
         == (192, 11, 11)),
        ("svhn tile quadrants", bool(np.array_equal(svhn_tile(x)[:, 32:, 32:], x))),
    ]


def cmd_verify(args) -> int:
    ok = True
    for name, passed in self_checks():
        print(f"{'PASS' if passed else 'FAIL'}  {name}")
        ok &= passed
    if args.pytest:
        tests = Path(args.pytest)
        rc = subprocess.call([sys.executable, "-m", "pytest", "-q", str(tests)])
        ok &= rc == 0
    return EXIT_OK if ok else EXIT_VERIFY


def _global_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="experiment config file (key = value)")
    parser.add_argument("--data-root", type=Path,
                        help="dataset root (default: $PERCEPT_EMBED_DATA or ~/.cache/percept_embed)")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--profile", choices=("paper", "desk"))
    parser.add_argument("--jobs", type=int, help="parallel cell workers")
    parser.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    # Global flags are accepted before or after the subcommand; the
    # subcommand copies suppress defaults so they never mask earlier values.
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    _global_flags(common)

    parser = argparse.ArgumentParser(prog="percept-embed", description=__doc__.splitlines()[0])
    _global_flags(parser)
    parser.set_defaults(config=None, data_root=None, out=None, seed=None, profile=None, jobs=1, verbose=False)
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("fetch", parents=[common], help="download and verify STL-10 / SVHN")
    p.add_argument("names", nargs="+", choices=("stl10", "svhn"))
    p.set_defaults(func=cmd_fetch)
    p = sub.add_parser("gen-lander", parents=[common], help="write the synthetic lander collection")
    p.set_defaults(func=cmd_gen_lander)
    p = sub.add_parser("run", parents=[common], help="run (or resume) an experiment matrix")
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("report", parents=[common], help="regenerate tables and plots from --out")
    p.set_defaults(func=cmd_report)
    p = sub.add_parser("verify", parents=[common], help="run analytic self-checks (and optionally pytest)")
    p.add_argument("--pytest", metavar="TESTS_DIR", help="also run the pytest suite in this directory")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    if args.data_root is None and os.environ.get("PERCEPT_EMBED_DATA"):
        args.data_root = Path(os.environ["PERCEPT_EMBED_DATA"])
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ReportError as exc:
        print(f"report error: {exc}", file=sys.stderr)
        return EXIT_CELL


if __name__ == "__main__":
    sys.exit(main())

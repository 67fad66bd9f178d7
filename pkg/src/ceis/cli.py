"""Command-line entry point: ``ceis {doublewell,gaussian,sweep,pde}``."""

from __future__ import annotations

import argparse
import logging
import sys

from .config import ConfigError, apply_overrides, load_config
from .experiments import EXIT_USAGE, RUNNERS, with_seed_and_out

logger = logging.getLogger("ceis")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ceis",
        description="Cross-entropy importance sampling experiments for small-noise diffusions.",
    )
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "doublewell": "double-well experiment: MC, CE training, IS estimate, PDE reference",
        "gaussian": "zero-drift oracle compared against the closed form (needs kappa = 0)",
        "sweep": "efficiency diagnostics across noise levels",
        "pde": "finite-difference reference solution only",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text, description=text)
        p.add_argument("--config", help="flat TOML configuration file")
        p.add_argument("--seed", type=int, help="base seed (overrides the config)")
        p.add_argument("--out", help="output directory (overrides the config)")
        p.add_argument(
            "--override",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="set any config key; VALUE is read as a TOML literal (repeatable)",
        )
        if name == "sweep":
            p.add_argument(
                "--epsilons",
                type=float,
                nargs="*",
                help="noise levels to sweep (default: the config's epsilons)",
            )
            p.add_argument("--untrained", action="store_true", help="use the zero control (crude MC)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = load_config(args.config)
        cfg = apply_overrides(cfg, args.override)
        cfg = with_seed_and_out(cfg, args.seed, args.out)
    except (ConfigError, OSError) as exc:
        print(f"ceis: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    if args.command == "sweep":
        epsilons = cfg.epsilons if args.epsilons is None else args.epsilons
        if not epsilons:
            print("ceis: sweep needs at least one epsilon", file=sys.stderr)
            return EXIT_USAGE
        status, summary = RUNNERS["sweep"](cfg, epsilons, train=not args.untrained)
    else:
        status, summary = RUNNERS[args.command](cfg)

    if status:
        print(f"ceis: {summary.get('error', 'failed')}", file=sys.stderr)
    else:
        print(f"ceis: {args.command} finished; artifacts in {cfg.out}")
    return status


if __name__ == "__main__":
    sys.exit(main())

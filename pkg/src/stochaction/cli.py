"""Command-line entry point: ``stochaction <subcommand> [options]``."""

from __future__ import annotations

import argparse
import json
import os
import sys

from .experiments import OUT_ENV, ConfigError, RunConfig, config_from_mapping, load_config, run
from .variations import random_variation_bank

SUBCOMMANDS = {
    "run": ("full pipeline for the configured experiment", ("action", "el", "criticality", "fbs")),
    "example": ("full pipeline on the explicit critical example", ("action", "el", "criticality", "fbs")),
    "criticality": ("criticality battery over projected bank variations", ("criticality",)),
    "el-test": ("Euler-Lagrange decomposition and martingale test", ("el",)),
    "fbs-verify": ("forward-backward system checks", ("fbs",)),
}

DEFAULTS_HELP = """
defaults (overridable in a TOML/JSON config file or by flags):
  experiment=example  n_steps=512  m_paths=50000  seed=7  alpha=0.01
  tol_abs=0.02  eps_list=[0.001, 0.01]  output_dir=out  threads=1
  potential={kind="zero"}  bank={size=20, clip_bound=1.0, seed=11}
  expect=critical (non-critical for ou_control)
output directory precedence: --out, then $%s, then the config file.
""" % OUT_ENV


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH", help="TOML or JSON run configuration")
    p.add_argument("--experiment", choices=["example", "wiener", "ou_control", "custom"])
    p.add_argument("--seed", type=int, metavar="N")
    p.add_argument("--steps", type=int, metavar="N", help="time steps on [0, 1]")
    p.add_argument("--paths", type=int, metavar="M", help="Monte Carlo paths")
    p.add_argument("--out", metavar="DIR", help="output directory")
    p.add_argument("--threads", type=int, metavar="K", help="noise-generation threads")
    p.add_argument("--exact-repro", action="store_true", help="single-threaded, bitwise stable run")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stochaction",
        description="Monte Carlo checks of least action principles on semimartingale laws.",
        epilog=DEFAULTS_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (help_text, _) in SUBCOMMANDS.items():
        p = sub.add_parser(name, help=help_text, epilog=DEFAULTS_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
        _common(p)
    p = sub.add_parser("bank-list", help="print the variation bank descriptors as JSON")
    p.add_argument("--config", metavar="PATH")
    p.add_argument("--seed", type=int, metavar="N", help="bank seed")
    p.add_argument("--size", type=int, metavar="N")
    p.add_argument("--clip-bound", type=float, metavar="C")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    data = cfg.to_dict()
    if args.command == "example":
        data["experiment"] = "example"
    for flag, key in [("experiment", "experiment"), ("seed", "seed"), ("steps", "n_steps"), ("paths", "m_paths"), ("threads", "threads")]:
        val = getattr(args, flag, None)
        if val is not None:
            data[key] = val
    if os.environ.get(OUT_ENV):
        data["output_dir"] = os.environ[OUT_ENV]
    if args.out:
        data["output_dir"] = args.out
    if args.exact_repro:
        data["exact_repro"] = True
    return config_from_mapping(data)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "bank-list":
            cfg = load_config(args.config) if args.config else RunConfig()
            bank = random_variation_bank(
                args.seed if args.seed is not None else cfg.bank.seed,
                args.size if args.size is not None else cfg.bank.size,
                args.clip_bound if args.clip_bound is not None else cfg.bank.clip_bound,
            )
            json.dump([k.describe() for k in bank], sys.stdout, indent=2)
            sys.stdout.write("\n")
            return 0
        cfg = resolve_config(args)
    except (ConfigError, TypeError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    manifest = run(cfg, SUBCOMMANDS[args.command][1])
    for c in manifest["checks"]:
        status = "PASS" if c["pass"] else "FAIL"
        print(f"{status}  {c['name']}: expected {c['expected']}, observed {c['observed']}")
    print(f"artefacts written to {cfg.output_dir}")
    return 0 if manifest["passed"] else 1


if __name__ == "__main__":
    sys.exit(main())

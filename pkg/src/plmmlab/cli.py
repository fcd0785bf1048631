"""Command line entry point ``plmm-lab``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .exceptions import ConfigError, PLMMError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _load_pair(spec: str):
    from .plmm import get_pair, pair_from_dict

    path = Path(spec)
    if path.suffix == ".json" or path.exists():
        try:
            return pair_from_dict(json.loads(path.read_text()))
        except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
            raise ConfigError(f"cannot load pair from {spec}: {exc}") from None
    try:
        return get_pair(spec)
    except KeyError as exc:
        raise ConfigError(str(exc.args[0])) from None


def _print(data) -> None:
    from .harness import _json_default

    print(json.dumps(data, indent=2, sort_keys=True, default=_json_default))


def cmd_analyze_pair(args) -> int:
    _print(_load_pair(args.pair).report())
    return EXIT_OK


def cmd_run(args) -> int:
    from .harness import ExperimentConfig, run, with_output

    cfg = ExperimentConfig.from_json(args.config)
    if args.out:
        cfg = with_output(cfg, args.out)
    res = run(cfg)
    _print({"directory": str(res.directory), "verdict": res.verdict, "files": res.files})
    return EXIT_OK


def cmd_preset(args) -> int:
    from .harness import run_preset

    res = run_preset(args.name, args.h, args.t_end, args.out)
    _print({"directory": str(res.directory), "verdict": res.verdict, "files": res.files})
    return EXIT_OK


def cmd_sweep(args) -> int:
    from .harness import ExperimentConfig, sweep, with_output

    cfg = ExperimentConfig.from_json(args.config)
    if args.out:
        cfg = with_output(cfg, args.out)
    _print(sweep(cfg))
    return EXIT_OK


def cmd_expansion_check(args) -> int:
    from .harness import ExperimentConfig, expansion_check, with_output

    cfg = ExperimentConfig.from_json(args.config)
    if args.out:
        cfg = with_output(cfg, args.out)
    _print(expansion_check(cfg))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="plmm-lab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze-pair", help="order, roots and growth parameters of a method pair")
    p.add_argument("pair", help="registered pair name or JSON file with {p: {rho, sigma}, q: {rho, sigma}}")
    p.set_defaults(func=cmd_analyze_pair)

    p = sub.add_parser("run", help="integrate and classify the invariant drift")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="override output_dir")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("preset", help="run a figure preset")
    p.add_argument("name", choices=["fig1", "fig2", "fig3", "fig4"])
    p.add_argument("--h", type=float)
    p.add_argument("--t-end", type=float, dest="t_end")
    p.add_argument("--out")
    p.set_defaults(func=cmd_preset)

    p = sub.add_parser("sweep", help="convergence table over step sizes and pairs")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("expansion-check", help="compare errors with the assembled expansion")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_expansion_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PLMMError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except FloatingPointError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())

"""Command-line interface.

Subcommands: run-attack, run-trace, sweep, render. Exit codes are a stable
CI contract: 0 success, 1 usage or config error, 2 leak detected where the
defense promises none, 3 i/o failure.
"""

import argparse
import json
import sys

from .harness import (
    EXIT_CONFIG, EXIT_IO, EXIT_OK, ConfigError, load_config, run_experiment,
    write_sweep,
)
from .report import render_heatmap, render_heatmap_png


def _global_flags() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="path to a JSON experiment config")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", default="out", help="output directory or file")
    common.add_argument("--parallel", type=int, default=1, metavar="N",
                        help="worker processes for sweeps")
    common.add_argument("--no-figures", action="store_true",
                        help="skip matplotlib PNG rendering")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags()
    parser = argparse.ArgumentParser(
        prog="rascache",
        parents=[common],
        description="cache timing attack simulator with fill-decorrelating defenses")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run-attack", parents=[common],
                   help="run one attack scenario and write its report")
    sub.add_parser("run-trace", parents=[common],
                   help="replay a trace scenario and write metrics")
    sub.add_parser("sweep", parents=[common],
                   help="run a JSON array of configs into one CSV")
    render = sub.add_parser("render", parents=[common],
                            help="render a matrix CSV to an SVG heatmap")
    render.add_argument("matrix", help="path to a matrix.csv file")
    render.add_argument("--png", action="store_true",
                        help="also render a PNG next to the SVG")
    return parser


def _load(args, expect_scenarios: str) -> "ExperimentConfig":
    if not args.config:
        raise ConfigError("--config is required")
    cfg = load_config(args.config)
    if expect_scenarios == "attack" and cfg.scenario == "trace":
        raise ConfigError("run-attack needs an attack scenario, got 'trace'")
    if expect_scenarios == "trace" and cfg.scenario != "trace":
        raise ConfigError(f"run-trace needs scenario 'trace', got '{cfg.scenario}'")
    if args.seed is not None:
        raw = dict(cfg.raw)
        raw["seed"] = args.seed
        from .harness import parse_config
        cfg = parse_config(raw)
    return cfg


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command in ("run-attack", "run-trace"):
            cfg = _load(args, "attack" if args.command == "run-attack" else "trace")
            code, files = run_experiment(cfg, args.out, figures=not args.no_figures)
            for f in files:
                print(f)
            return code
        if args.command == "sweep":
            if not args.config:
                raise ConfigError("--config is required")
            with open(args.config, encoding="utf-8") as f:
                configs = json.load(f)
            if not isinstance(configs, list) or not configs:
                raise ConfigError("sweep config must be a non-empty JSON array")
            if args.seed is not None:
                configs = [{**c, "seed": args.seed} for c in configs]
            out = args.out if args.out.endswith(".csv") else args.out + ".csv"
            write_sweep(configs, out, args.parallel, figures=not args.no_figures)
            print(out)
            return EXIT_OK
        if args.command == "render":
            with open(args.matrix, encoding="utf-8") as f:
                text = f.read()
            out = args.out if args.out.endswith(".svg") else args.out + ".svg"
            svg = render_heatmap(text, title=args.matrix)
            with open(out, "w", encoding="utf-8") as f:
                f.write(svg)
            print(out)
            if args.png:
                png = out.rsplit(".", 1)[0] + ".png"
                render_heatmap_png(text, png, title=args.matrix)
                print(png)
            return EXIT_OK
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, json.JSONDecodeError) as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return EXIT_IO
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except RuntimeError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())

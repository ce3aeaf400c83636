"""Command-line entry point.

Three subcommands:

* ``run``    — one experiment; emits metrics.csv / summary.json /
  pi_final.txt / SVG charts into the output directory.
* ``ablate`` — a grid of experiments over several seeds; per-cell run
  outputs land in distinct subdirectories, plus a grid summary and
  accuracy charts.
* ``check``  — the built-in property/oracle suites.

Flags mirror the run-config keys; a config file provides defaults that
flags override.  Relative output directories are rooted at
``$AUGEM_OUT_ROOT`` when that variable is set.  Exit status: 0 success,
2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import checks, harness, latentem

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="FILE",
                        help="flat key=value config file")
    parser.add_argument("--dataset", help="dataset spec, e.g. "
                        "'shapes:n=10000' or 'blobs:n=1000,c=10,dim=16'")
    parser.add_argument("--model",
                        help="model spec: softmax | mlp:128,128 | "
                             "convnet:8,16")
    parser.add_argument("--method", choices=harness.METHODS)
    parser.add_argument("--k", type=int, help="policies drawn per step")
    parser.add_argument("--sigma", type=float,
                        help="softmin temperature (0 and inf select the "
                             "hard/uniform limits)")
    parser.add_argument("--fixed-pi", dest="fixed_pi",
                        choices=("true", "false"),
                        help="freeze the policy prior at uniform")
    parser.add_argument("--window", type=int,
                        help="moving-average window for the prior")
    parser.add_argument("--lr0", type=float, help="peak learning rate")
    parser.add_argument("--weight-decay", dest="weight_decay", type=float)
    parser.add_argument("--momentum", type=float)
    parser.add_argument("--batch-size", dest="batch_size", type=int)
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--subset-n", dest="subset_n", type=int,
                        help="cap on training samples")
    parser.add_argument("--out-dir", dest="out_dir")
    parser.add_argument("--final-op", dest="final_op",
                        choices=("cutout", "none"),
                        help="trailing occlusion applied after each policy")


def _cli_values(args: argparse.Namespace) -> dict:
    keys = ("dataset", "model", "method", "k", "sigma", "fixed_pi",
            "window", "lr0", "weight_decay", "momentum", "batch_size",
            "epochs", "seed", "subset_n", "out_dir", "final_op")
    out = {}
    for key in keys:
        value = getattr(args, key, None)
        if value is None:
            continue
        if key == "fixed_pi":
            value = value == "true"
        out[key] = value
    return out


def _build_config(args: argparse.Namespace) -> harness.RunConfig:
    file_values = harness.parse_config_file(args.config) \
        if args.config else None
    return harness.build_config(file_values, _cli_values(args))


def _cmd_run(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    out_dir = harness.resolve_out_dir(cfg.out_dir)
    report = harness.run_experiment(cfg)
    paths = harness.emit_metrics(report, out_dir)
    paths += harness.emit_plots(report, out_dir)
    print(f"run: {report.iterations} iterations, "
          f"final accuracy {report.final_accuracy:.4f}")
    for path in paths:
        print(f"  wrote {path}")
    return EXIT_OK


def _parse_grid(text: str) -> dict:
    """'sigma=0,1;fixed_pi=true,false' -> {field: [values...]}."""
    grid = {}
    for clause in text.split(";"):
        clause = clause.strip()
        if not clause:
            continue
        if "=" not in clause:
            raise harness.ConfigError(
                f"grid clause {clause!r} is not key=v1,v2,...")
        key, values = clause.split("=", 1)
        key = key.strip()
        grid[key] = [harness._coerce(key, v) for v in values.split(",")]
    if not grid:
        raise harness.ConfigError("empty grid")
    return grid


def _cmd_ablate(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    grid = _parse_grid(args.grid)
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    out_dir = harness.resolve_out_dir(cfg.out_dir)
    report = harness.run_ablation_grid(cfg, grid, seeds, keep_reports=True)
    for cell in report.cells:
        cell_dir = os.path.join(out_dir, harness.cell_dir_name(cell.params))
        for seed, run in zip(cell.seeds, cell.reports):
            harness.emit_metrics(run, os.path.join(cell_dir,
                                                   f"seed={seed}"))
        print(f"cell {harness.cell_dir_name(cell.params)}: "
              f"mean accuracy {cell.mean:.4f} +/- {cell.std:.4f}")
    harness.emit_grid_summary(report, out_dir)
    harness.emit_plots(report, out_dir)
    print(f"grid summary in {out_dir}")
    return EXIT_OK


def _cmd_check(args: argparse.Namespace) -> int:
    results = checks.run_checks(only=args.only)
    if not results:
        print(f"no check matches {args.only!r}", file=sys.stderr)
        return EXIT_CONFIG
    failed = 0
    for res in results:
        status = "PASS" if res.ok else "FAIL"
        print(f"[{status}] {res.name}: {res.detail} ({res.seconds:.2f}s)")
        failed += 0 if res.ok else 1
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_NUMERIC


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="augem",
        description="EM-style augmentation-policy training harness")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="train one configuration")
    _add_config_flags(p_run)
    p_run.set_defaults(fn=_cmd_run)

    p_abl = sub.add_parser("ablate", help="run a parameter grid")
    _add_config_flags(p_abl)
    p_abl.add_argument("--grid", required=True,
                       help="semicolon-separated clauses, e.g. "
                            "'sigma=0,1;fixed_pi=true,false'")
    p_abl.add_argument("--seeds", default="0,1,2",
                       help="comma-separated seed list")
    p_abl.set_defaults(fn=_cmd_ablate)

    p_chk = sub.add_parser("check", help="run property/oracle suites")
    p_chk.add_argument("--only", help="substring filter on check names")
    p_chk.set_defaults(fn=_cmd_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except harness.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FloatingPointError, latentem.DegenerateLikelihoodError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())

"""Command line entry point: ``gibbs-prune {run,sample-demo,export-mask,report,config}``."""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .experiment.config import ConfigError, ExperimentConfig, format_config, parse_config
from .experiment.demo import sample_demo
from .experiment.maskio import export_mask
from .experiment.report import write_summary
from .experiment.runner import run_experiment
from .nn.checkpoint import load_checkpoint

log = logging.getLogger("gibbs_prune")


def _config_text(path, sets) -> str:
    text = Path(path).read_text(encoding="utf-8") if path else ""
    return text + "\n" + "\n".join(sets or ()) + "\n"


def build_configs(args) -> list[ExperimentConfig]:
    """One config per (config file, seed) pair; ``--set`` lines apply to all."""
    paths = args.config or [None]
    out = []
    for path in paths:
        base = parse_config(_config_text(path, args.set), stretch=args.stretch,
                            epochs=getattr(args, "epochs", None))
        seeds = args.seed if args.seed else [base.seed]
        out += [base.with_overrides(seed=s) for s in seeds]
    return out


def _run_one(cfg: ExperimentConfig, out_dir):
    result = run_experiment(cfg, out_dir)
    return cfg.run_name, result.rows[-1]["val_accuracy"], str(result.out_dir)


def cmd_run(args) -> int:
    configs = build_configs(args)
    names = [c.run_name for c in configs]
    if len(set(names)) != len(names):
        raise ConfigError("two runs share an output directory; give each config a distinct experiment_id")
    if args.jobs > 1 and len(configs) > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            results = list(pool.map(_run_one, configs, [args.out_dir] * len(configs)))
    else:
        results = [_run_one(c, args.out_dir) for c in configs]
    for name, acc, where in results:
        print(f"{name}\tval_accuracy={acc:.4f}\t{where}")
    return 0


def cmd_sample_demo(args) -> int:
    for cfg in build_configs(args):
        out = args.out or Path(args.out_dir or cfg.output_dir) / cfg.run_name / "sample_demo.csv"
        sample_demo(cfg, checkpoint=args.checkpoint, out_path=out)
        print(out)
    return 0


def cmd_export_mask(args) -> int:
    _, _, masks = load_checkpoint(args.checkpoint)
    if not masks:
        raise ConfigError(f"{args.checkpoint} holds no masks")
    export_mask(masks, args.out)
    print(args.out)
    return 0


def cmd_report(args) -> int:
    for path in write_summary(args.runs, args.out_dir):
        print(path)
    return 0


def cmd_config(args) -> int:
    for cfg in build_configs(args):
        sys.stdout.write(format_config(cfg))
    return 0


def _add_config_flags(p, epochs=True):
    p.add_argument("--config", action="append", metavar="PATH",
                   help="key=value config file (repeatable; defaults apply without one)")
    p.add_argument("--seed", action="append", type=int, metavar="INT",
                   help="seed override (repeatable: one run per seed)")
    p.add_argument("--stretch", type=int, metavar="INT", help="schedule stretch factor")
    if epochs:
        p.add_argument("--epochs", type=int, metavar="INT", help="epoch count before stretching")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="extra config line (repeatable)")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gibbs-prune", description="Train networks under Gibbs-sampled pruning masks and summarize the runs.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="train and prune, or run a baseline")
    _add_config_flags(p)
    p.add_argument("--out-dir", metavar="PATH", help="output root (default: the config's output_dir)")
    p.add_argument("--jobs", type=int, default=1, metavar="INT", help="concurrent runs")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sample-demo", help="mask agreement with the converged mask across the beta schedule")
    _add_config_flags(p)
    p.add_argument("--checkpoint", metavar="PATH", help="frozen weights (default: fresh initialization)")
    p.add_argument("--out-dir", metavar="PATH")
    p.add_argument("--out", metavar="PATH", help="CSV path (single config and seed)")
    p.set_defaults(func=cmd_sample_demo)

    p = sub.add_parser("export-mask", help="write the masks stored in a checkpoint as a mask file")
    p.add_argument("--checkpoint", required=True, metavar="PATH")
    p.add_argument("--out", required=True, metavar="PATH")
    p.set_defaults(func=cmd_export_mask)

    p = sub.add_parser("report", help="aggregate report.csv files into summary.csv and curves.csv")
    p.add_argument("runs", nargs="+", metavar="PATH", help="run directories or report files")
    p.add_argument("--out-dir", default=".", metavar="PATH")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("config", help="print the resolved configuration")
    _add_config_flags(p)
    p.set_defaults(func=cmd_config)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"gibbs-prune: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())

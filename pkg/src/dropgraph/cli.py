"""Command-line front end.

Subcommands:

* ``run <config>`` - execute the configured experiment over its seeds,
  write per-run records (JSONL), a summary CSV, and the dataset cache.
* ``sweep <config> --axis <name> --values <list>`` - run the cross product
  of one regularizer axis against the shared seeds; emit a tidy long-format
  CSV for plotting.
* ``verify`` - run the invariant suite and print a pass/fail table.

Exit codes: 0 success, 1 verification failure, 2 configuration/parse error,
3 training divergence.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .config import ExperimentConfig, config_to_text, parse_config_file
from .data import (
    SbmGraphSpec,
    SyntheticImageSpec,
    gen_images,
    gen_sbm,
    save_graph_dataset,
    save_image_dataset,
)
from .errors import ConfigError, DropGraphError
from .train import multi_seed, summarize_records, write_run_records
from .verify import CHECK_NAMES, run_checks

SWEEP_AXES = {
    "alpha": ("reg_alpha", float),
    "rho": ("reg_rho", float),
    "adjacency_mode": ("reg_adjacency", str),
    "scheduler": ("reg_scheduler", str),
}


def _revalidate(cfg: ExperimentConfig) -> ExperimentConfig:
    # replace() skips validation; round-trip through the parser restores it
    from .config import parse_config

    return parse_config(config_to_text(cfg))


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    updates = {}
    if args.seeds:
        updates["seeds"] = tuple(int(s) for s in args.seeds.split(","))
    if args.out_dir:
        updates["out_dir"] = args.out_dir
    if args.threads:
        updates["threads"] = args.threads
    return _revalidate(replace(cfg, **updates)) if updates else cfg


def _print_header(cfg: ExperimentConfig, command: str):
    print(f"# dropgraph {command} | task={cfg.task} | config={cfg.config_hash()} "
          f"| seeds={','.join(str(s) for s in cfg.seeds)} | data.seed={cfg.data_seed}")


def _write_dataset_cache(cfg: ExperimentConfig, out_dir: Path):
    if cfg.task == "image":
        spec = SyntheticImageSpec(
            classes=cfg.data_classes, image_size=cfg.data_image_size,
            train_count=cfg.data_train_count, val_count=cfg.data_val_count,
            noise_std=cfg.data_noise_std, seed=cfg.data_seed)
        save_image_dataset(gen_images(spec), out_dir / "dataset.dgd")
    else:
        spec = SbmGraphSpec(
            nodes=cfg.data_nodes, communities=cfg.data_communities,
            p_in=cfg.data_p_in, p_out=cfg.data_p_out,
            labeled_per_class=cfg.data_labeled_per_class,
            feature_noise=cfg.data_feature_noise,
            feature_dim=cfg.data_feature_dim, seed=cfg.data_seed)
        save_graph_dataset(gen_sbm(spec), spec, out_dir / "dataset.dgd")


_SUMMARY_COLUMNS = ("row_type,label,config_hash,seed,status,"
                    "final_train_acc,final_val_acc,generalization_gap")


def _summary_rows(label: str, records, summary):
    rows = []
    for r in records:
        rows.append(f"run,{label},{r.config_hash},{r.seed},{r.status},"
                    f"{r.final_train_acc!r},{r.final_val_acc!r},{r.generalization_gap!r}")
    chash = records[0].config_hash if records else "-"
    for stat in ("median", "min", "max"):
        rows.append(
            f"{stat},{label},{chash},-,-,"
            f"{summary['final_train_acc'][stat]!r},"
            f"{summary['final_val_acc'][stat]!r},"
            f"{summary['generalization_gap'][stat]!r}"
        )
    return rows


def cmd_run(args) -> int:
    try:
        cfg = _apply_overrides(parse_config_file(args.config), args)
    except FileNotFoundError:
        print(f"error: config file not found: {args.config}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _print_header(cfg, "run")
    (out_dir / "config.txt").write_text(config_to_text(cfg), encoding="utf-8")
    _write_dataset_cache(cfg, out_dir)
    try:
        records = multi_seed([cfg], cfg.seeds, threads=cfg.threads)[0]
    except DropGraphError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    write_run_records(out_dir / "runs.jsonl", cfg, records)
    summary = summarize_records(records)
    lines = [_SUMMARY_COLUMNS] + _summary_rows("run", records, summary)
    (out_dir / "summary.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    med = summary["final_val_acc"]["median"]
    gap = summary["generalization_gap"]["median"]
    print(f"median val_acc={med:.4f} gap={gap:.4f} over {len(records)} runs "
          f"-> {out_dir / 'summary.csv'}")
    if any(r.status != "ok" for r in records):
        print("error: at least one run diverged", file=sys.stderr)
        return 3
    return 0


def cmd_sweep(args) -> int:
    try:
        cfg = _apply_overrides(parse_config_file(args.config), args)
    except FileNotFoundError:
        print(f"error: config file not found: {args.config}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.axis not in SWEEP_AXES:
        print(f"error: --axis must be one of {sorted(SWEEP_AXES)}", file=sys.stderr)
        return 2
    field_name, caster = SWEEP_AXES[args.axis]
    try:
        values = [caster(v.strip()) for v in args.values.split(",") if v.strip()]
        if not values:
            raise ConfigError("--values is empty")
        sweep_cfgs = [_revalidate(replace(cfg, **{field_name: v})) for v in values]
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _print_header(cfg, f"sweep --axis {args.axis}")
    _write_dataset_cache(cfg, out_dir)
    try:
        groups = multi_seed(sweep_cfgs, cfg.seeds, threads=cfg.threads)
    except DropGraphError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    long_rows = [f"{args.axis},seed,status,final_train_acc,final_val_acc,generalization_gap"]
    diverged = False
    for value, sub_cfg, records in zip(values, sweep_cfgs, groups):
        write_run_records(out_dir / f"runs_{args.axis}_{value}.jsonl", sub_cfg, records)
        for r in records:
            diverged |= r.status != "ok"
            long_rows.append(f"{value},{r.seed},{r.status},{r.final_train_acc!r},"
                             f"{r.final_val_acc!r},{r.generalization_gap!r}")
        med = summarize_records(records)["final_val_acc"]["median"]
        print(f"{args.axis}={value}: median val_acc={med:.4f}")
    (out_dir / "sweep.csv").write_text("\n".join(long_rows) + "\n", encoding="utf-8")
    print(f"wrote {out_dir / 'sweep.csv'} ({len(long_rows) - 1} rows)")
    return 3 if diverged else 0


def cmd_verify(args) -> int:
    names = args.check or None
    results = run_checks(names)
    width = max(len(r.name) for r in results)
    failures = 0
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        failures += not r.passed
        print(f"{r.name:<{width}}  {status}  {r.seconds:7.2f}s  {r.detail}")
    print(f"{len(results) - failures}/{len(results)} checks passed")
    return 1 if failures else 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="dropgraph",
        description="Graph-reasoning feature-map regularization experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_shared(p):
        p.add_argument("--seeds", help="comma list overriding the config's seeds")
        p.add_argument("--out-dir", help="output directory override")
        p.add_argument("--threads", type=int, help="worker processes for independent runs")

    p_run = sub.add_parser("run", help="run one experiment over its seeds")
    p_run.add_argument("config")
    add_shared(p_run)
    p_run.set_defaults(fn=cmd_run)

    p_sweep = sub.add_parser("sweep", help="sweep one regularizer axis")
    p_sweep.add_argument("config")
    p_sweep.add_argument("--axis", required=True, help=f"one of {sorted(SWEEP_AXES)}")
    p_sweep.add_argument("--values", required=True, help="comma list of axis values")
    add_shared(p_sweep)
    p_sweep.set_defaults(fn=cmd_sweep)

    p_verify = sub.add_parser("verify", help="run the invariant suite")
    p_verify.add_argument("--check", action="append", choices=CHECK_NAMES,
                          help="run only the named check (repeatable)")
    p_verify.set_defaults(fn=cmd_verify)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())

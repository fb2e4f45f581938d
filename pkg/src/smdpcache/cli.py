"""Command line entry point: ``smdpcache {run,sweep,compare-convergence,compare-mdp-smdp,export}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from smdpcache.harness import (
    SWEEP_AXES,
    ExperimentConfig,
    compare_mdp_smdp,
    export_results,
    load_config,
    resolve_output_dir,
    run_convergence_comparison,
    run_experiment,
    run_sweep,
    write_curve,
)

log = logging.getLogger("smdpcache")


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    changes = {}
    if args.seeds is not None:
        changes["seeds"] = args.seeds
    if args.workers is not None:
        changes["workers"] = args.workers
    if args.output_dir is not None:
        changes["output_dir"] = args.output_dir
    if getattr(args, "policy", None):
        changes["policy"] = args.policy
    if getattr(args, "train_steps", None) is not None:
        changes["train_steps"] = args.train_steps
    return cfg.replace(**changes) if changes else cfg


def cmd_run(args):
    cfg = _config(args)
    reports = run_experiment(cfg)
    out = export_results(reports, resolve_output_dir(cfg), cfg, trajectories=args.trajectories)
    for r in reports:
        print(f"seed={r.seed} policy={r.policy} hits={r.hit_count} utility={r.total_utility:.4f}")
    log.info("wrote %s", out)


def cmd_sweep(args):
    cfg = _config(args)
    result = run_sweep(cfg, args.axis, args.values)
    out = resolve_output_dir(cfg)
    export_results([r for reps in result.reports for r in reps], out, cfg)
    result.write_csv(out / f"sweep_{args.axis}.csv")
    for row in result.table():
        print(f"{args.axis}={row['value']:g} hits={row['hit_mean']:.1f}±{row['hit_std']:.1f} "
              f"utility={row['utility_mean']:.3f}±{row['utility_std']:.3f}")


def cmd_convergence(args):
    cfg = _config(args)
    res = run_convergence_comparison(cfg, args.fraction)
    out = resolve_output_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "convergence.csv", "w") as fh:
        fh.write("seed,enhanced_steps,uniform_steps\n")
        for s, e, u in res.rows():
            fh.write(f"{s},{e},{u}\n")
    for s, ce, cu in zip(res.seeds, res.enhanced_curves, res.uniform_curves):
        write_curve(out / f"curve_convergence_ppo_seed{s}.csv", ce)
        write_curve(out / f"curve_convergence_uniform-ppo_seed{s}.csv", cu)
    for s, e, u in res.rows():
        print(f"seed={s} enhanced={e} uniform={u}")
    print(f"enhanced faster on {res.enhanced_wins}/{len(res.seeds)} seeds")


def cmd_mdp_smdp(args):
    cfg = _config(args)
    res = compare_mdp_smdp(cfg, args.rates)
    out = resolve_output_dir(cfg)
    reports = [r for v in res.values() for arm in ("smdp", "mdp") for r in v[arm]]
    export_results(reports, out, cfg)
    for lam, v in res.items():
        smdp = sum(r.hit_count for r in v["smdp"]) / len(v["smdp"])
        mdp = sum(r.hit_count for r in v["mdp"]) / len(v["mdp"])
        print(f"lambda={lam:g} smdp_hits={smdp:.1f} mdp_hits={mdp:.1f}")


def cmd_export(args):
    """Print a results CSV, optionally filtered to one policy."""
    path = Path(args.path)
    if path.is_dir():
        path = path / "results.csv"
    lines = path.read_text().splitlines()
    if not lines:
        return
    header = lines[0].split(",")
    keep = [lines[0]]
    for line in lines[1:]:
        row = dict(zip(header, line.split(",")))
        if args.policy is None or row.get("policy") == args.policy:
            keep.append(line)
    text = "\n".join(keep) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="smdpcache", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="YAML experiment config")
        sp.add_argument("--seeds", type=int, nargs="+")
        sp.add_argument("--workers", type=int)
        sp.add_argument("--output-dir")
        sp.add_argument("--train-steps", type=int)

    sp = sub.add_parser("run", help="train and evaluate one policy")
    common(sp)
    sp.add_argument("--policy")
    sp.add_argument("--trajectories", action="store_true", help="also write evaluation traces")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("sweep", help="vary one workload parameter")
    common(sp)
    sp.add_argument("--policy")
    sp.add_argument("--axis", choices=sorted(SWEEP_AXES), required=True)
    sp.add_argument("--values", type=float, nargs="+", required=True)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("compare-convergence", help="prioritised vs uniform replay")
    common(sp)
    sp.add_argument("--fraction", type=float, default=0.9)
    sp.set_defaults(func=cmd_convergence)

    sp = sub.add_parser("compare-mdp-smdp", help="request-driven vs slotted epochs")
    common(sp)
    sp.add_argument("--rates", type=float, nargs="+", default=[1.0, 5.0])
    sp.set_defaults(func=cmd_mdp_smdp)

    sp = sub.add_parser("export", help="print or filter a results CSV")
    sp.add_argument("path")
    sp.add_argument("--policy")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_export)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

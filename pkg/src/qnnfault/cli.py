"""Command-line driver: ``qnnfault <subcommand> [flags]``.

Data goes to files only; progress and reports go to stderr.  Exit codes are
0 on success, 1 on a runtime failure (including a failed ``--verify`` or
``--oracle`` check) and 2 on a usage error.  Any flag may also come from a
JSON ``--config`` file; the command line wins over the file.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import re
import sys
from pathlib import Path

from . import campaign as cp
from . import replication as rp
from . import scheduler as sc
from .core import QuantSpec
from .errors import CheckpointMismatch, QNNFaultError, StructuralError, UsageError
from .injector import all_single_faults, verify_all
from .modelio import load_dataset, load_model, save_dataset, save_model
from .synthetic import make_dataset, synthetic_network

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def _int_list(tokens) -> list[int] | None:
    if tokens is None:
        return None
    if isinstance(tokens, (int, str)):
        tokens = [tokens]
    out = []
    for tok in tokens:
        if isinstance(tok, int):
            out.append(tok)
            continue
        for part in str(tok).split(","):
            if part.strip():
                try:
                    out.append(int(part))
                except ValueError:
                    raise UsageError(f"not an integer: {part!r}") from None
    return out


def _num_list(tokens) -> list[str]:
    if isinstance(tokens, (int, float, str)):
        tokens = [tokens]
    out = []
    for tok in tokens:
        out += [p.strip() for p in str(tok).split(",") if p.strip()]
    return out


def parse_precision(text: str) -> QuantSpec:
    m = re.fullmatch(r"[Ww](\d+)[Aa](\d+)", text.strip())
    if not m:
        raise UsageError(f"precision must look like W1A2, got {text!r}")
    try:
        return QuantSpec(int(m.group(1)), int(m.group(2)))
    except StructuralError as exc:
        raise UsageError(str(exc)) from None


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dataset(args):
    if not args.dataset:
        raise UsageError("--dataset is required")
    if args.subset is not None and args.subset < 1:
        raise UsageError("--subset must be >= 1")
    return load_dataset(args.dataset, limit=args.subset)


def _jobs(args) -> int:
    if args.jobs < 1:
        raise UsageError(f"--jobs must be >= 1, got {args.jobs}")
    return args.jobs


class _Progress:
    def __init__(self, label: str, every: float = 0.05):
        self.label = label
        self.every = every
        self.next = 0.0

    def __call__(self, done: int, total: int):
        if total and (done / total >= self.next or done == total):
            log(f"{self.label}: {done}/{total}")
            self.next = done / total + self.every


def _write_rows(path: Path, rows) -> Path:
    with open(path, "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)
    return path


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_gen_model(args) -> int:
    quant = parse_precision(args.precision)
    kw = {"threshold_rule": args.threshold_rule}
    net = synthetic_network(args.preset, quant, seed=args.seed, **kw)
    path = save_model(net, args.out)
    log(f"model {net.name} ({len(net.layers)} layers) written to {path}")
    if args.dataset_out:
        ds = make_dataset(net, args.images, seed=args.seed, label_noise=args.label_noise,
                          pool=args.pool, name=Path(args.dataset_out).stem)
        save_dataset(ds, args.dataset_out)
        log(f"dataset of {len(ds)} images written to {args.dataset_out}")
    return EXIT_OK


def _plan(args, net) -> cp.CampaignPlan:
    levels = _int_list(args.levels)
    layers = _int_list(args.layer)
    if args.mode == "whole-channel":
        if args.f is not None:
            raise UsageError("-f applies to --mode pe-combinations only")
        return cp.plan_whole_channel(net, levels, layers)
    if not layers or len(layers) != 1:
        raise UsageError("--mode pe-combinations needs exactly one --layer")
    if args.f is None:
        raise UsageError("--mode pe-combinations needs -f")
    return cp.plan_pe_combinations(net, layers[0], args.f, levels)


def cmd_campaign(args) -> int:
    net = load_model(args.model)
    plan = _plan(args, net)
    log(f"{plan.count} experiments")
    if args.dry_run:
        return EXIT_OK
    jobs = _jobs(args)
    ds = _dataset(args)
    out = _out_dir(args.out)
    ckpt = Path(args.checkpoint) if args.checkpoint else out / "results.jsonl"
    if ckpt.exists() and ckpt.stat().st_size and not args.resume:
        raise UsageError(f"{ckpt} exists; pass --resume to continue it or choose another --out")
    meta = {"precision": net.quant.label, "subset": args.subset, "model": net.name}
    result = cp.run_campaign(plan, net, ds, jobs=jobs, checkpoint=ckpt, stop_after=args.stop_after,
                             progress=_Progress("campaign"), metadata=meta)
    if not result.complete:
        log(f"stopped after {len(result.counts)}/{plan.count} experiments; rerun with --resume")
        return EXIT_OK
    _write_campaign_outputs(result, out, net.quant.label)
    log(f"results in {out}")
    return EXIT_OK


def _write_campaign_outputs(result: cp.CampaignResult, out: Path, label: str):
    cp.write_result_csv(result, out / "results.csv")
    if result.plan.mode == cp.WHOLE_CHANNEL:
        rows = cp.summarize(result)
        cp.write_summary_csv(rows, out / "summary.csv")
        levels = sorted(set(result.plan.levels) | {-1, 1})
        head = ["precision", "fault_free"] + [f"{s}{lv:+d}" for lv in levels for s in ("min", "max")]
        _write_rows(out / "table.csv", [head, cp.table_row(rows, label, levels)])
    else:
        layer = result.plan.layers[0]
        for level in result.plan.levels:
            cp.build_accuracy_matrix(result, layer, level).to_csv(out / f"matrix_L{layer}_{level:+d}.csv")
        cp.build_accuracy_matrix(result, layer).to_csv(out / f"matrix_L{layer}.csv")


def cmd_summarize(args) -> int:
    result = cp.load_result(args.results)
    if not result.complete:
        raise QNNFaultError(f"{args.results} is incomplete ({len(result.counts)}/{result.plan.count}); "
                            "resume the campaign first")
    out = _out_dir(args.out)
    label = args.label or result.metadata.get("precision", "")
    _write_campaign_outputs(result, out, label)
    log(f"summary written to {out}")
    return EXIT_OK


def _thresholds(args) -> list[str]:
    ts = _num_list(args.threshold) if args.threshold else []
    for t in ts:
        try:
            if float(t) < 0:
                raise ValueError
        except ValueError:
            raise UsageError(f"threshold must be a non-negative number, got {t!r}") from None
    return ts


def cmd_replicate(args) -> int:
    net = load_model(args.model)
    ops = rp.OpsProfile.from_network(net)
    ts = _thresholds(args)
    if not ts and not args.full_tmr:
        raise UsageError("give --threshold values and/or --full-tmr")
    if (ts or args.verify) and not args.results:
        raise UsageError("--threshold and --verify need --results")
    result = cp.load_result(args.results) if ts or args.verify else None
    if result is not None and result.plan.network and result.plan.network != cp.model_digest(net):
        raise UsageError("results were produced on a different model")
    out = _out_dir(args.out)
    plans = []
    for t in ts:
        plan = rp.plan_replication(result, t, ops)
        rp.save_plan(plan, out / f"plan_t{t}.json")
        plans.append(plan)
    if args.full_tmr:
        plan = rp.full_tmr_plan(ops)
        rp.save_plan(plan, out / "plan_full.json")
        plans.append(plan)
    table = rp.overhead_table(plans, ops)
    _write_rows(out / "overhead.csv", table)
    for row in table:
        log("  ".join(f"{c:>10}" for c in row))
    if not args.verify:
        return EXIT_OK
    ds = _dataset(args)
    jobs = _jobs(args)
    rows = [["threshold", "ops_overhead", "worst_drop", "ok"]]
    ok_all = True
    for plan in plans:
        res = rp.protected_campaign(rp.apply_replication(net, plan), result.plan, ds, jobs)
        drop = rp.worst_case_drop(res)
        limit = plan.threshold if plan.threshold is not None else 0
        ok = drop <= limit
        ok_all &= ok
        label = "full" if plan.threshold is None else str(float(plan.threshold))
        rows.append([label, f"{float(plan.ops_overhead):.2f}", f"{float(drop):.4f}", int(ok)])
        log(f"verify t={label}: worst drop {float(drop):.4f} -> {'ok' if ok else 'FAILED'}")
    _write_rows(out / "verify.csv", rows)
    return EXIT_OK if ok_all else EXIT_FAIL


def _matrix(args) -> cp.AccuracyMatrix:
    if bool(args.matrix) == bool(args.results):
        raise UsageError("give exactly one of --matrix or --results")
    if args.matrix:
        return cp.AccuracyMatrix.from_csv(args.matrix)
    result = cp.load_result(args.results)
    layers = _int_list(args.layer)
    levels = _int_list(args.levels)
    if levels and len(levels) > 1:
        mats = [cp.build_accuracy_matrix(result, layers[0] if layers else None, lv) for lv in levels]
        return sc.combine_levels(mats)
    return cp.build_accuracy_matrix(result, layers[0] if layers else None, levels[0] if levels else None)


def cmd_schedule(args) -> int:
    m = _matrix(args)
    if args.time_budget is not None and args.time_budget <= 0:
        raise UsageError("--time-budget must be positive")
    inst = sc.SchedulingInstance(m)
    f = m.group_size
    default = [tuple(m.channels[i] for i in g) for g in sc.default_groups(len(m.channels), f)]
    d_val, d_worst = sc.worst_case_of_groups(default, m)
    sol = sc.optimal_schedule(inst, args.time_budget)
    out = _out_dir(args.out)
    (out / "assignment.json").write_text(json.dumps({
        "folding": f,
        "channels": list(m.channels),
        "default": [list(g) for g in default],
        "optimal": [list(g) for g in sol.groups],
        "proven_optimal": sol.optimal,
    }, indent=2) + "\n")
    total = m.total
    pct = (lambda v: f"{100 * v / total:.2f}") if total else str
    report = [
        ["metric", "correct", "accuracy"],
        ["default_worst_case", d_val, pct(d_val)],
        ["optimal_worst_case", sol.min_acc, pct(sol.min_acc)],
        ["improvement", sol.min_acc - d_val, pct(sol.min_acc - d_val)],
        ["proven_optimal", int(sol.optimal), ""],
    ]
    _write_rows(out / "report.csv", report)
    markers = [["schedule", "pe", "channels", "correct"]]
    for name, groups in (("default", default), ("optimal", sol.groups)):
        for pe, g in enumerate(groups):
            markers.append([name, pe, ";".join(map(str, g)), m[g]])
    _write_rows(out / "markers.csv", markers)
    if f == 2:
        m.to_dense_csv(out / "heatmap.csv")
    log(f"default worst case {d_val}, optimal {sol.min_acc}"
        + ("" if sol.optimal else " (time budget hit; not proven optimal)"))
    if args.oracle:
        if len(m.channels) > 12:
            raise UsageError("--oracle enumerates all partitions; use at most 12 channels")
        ref, _ = sc.brute_force_schedule(inst)
        log(f"oracle worst case {ref}")
        if ref != sol.min_acc:
            log("oracle disagrees")
            return EXIT_FAIL
    return EXIT_OK


def cmd_pareto(args) -> int:
    points: list[rp.CostPoint] = []
    results = args.results or []
    models = args.model or []
    if len(results) != len(models):
        raise UsageError("--results and --model must pair up one to one")
    if not results and not args.points:
        raise UsageError("give --results/--model pairs and/or --points files")
    ts = _thresholds(args) or ["0.5", "1", "2"]
    for res_path, model_path in zip(results, models):
        net = load_model(model_path)
        result = cp.load_result(res_path)
        ops = rp.OpsProfile.from_network(net)
        # unprotected is t = inf; full TMR keeps an empty threshold
        bare = rp.cost_point(result, rp.plan_from_channels({}, ops), ops, net.quant)
        points.append(dataclasses.replace(bare, threshold=float("inf")))
        points += [rp.cost_point(result, rp.plan_replication(result, t, ops), ops, net.quant) for t in ts]
        points.append(rp.cost_point(result, rp.full_tmr_plan(ops), ops, net.quant))
    for path in args.points or []:
        points += rp.read_cost_csv(path)
    frontier = rp.pareto_frontier(points)
    out = _out_dir(args.out)
    rp.write_cost_csv(points, out / "pareto.csv", frontier)
    log(f"{len(points)} points, {len(frontier)} on the frontier")
    return EXIT_OK


def cmd_verify_injection(args) -> int:
    net = load_model(args.model)
    ds = _dataset(args)
    levels = _int_list(args.levels)
    faults = all_single_faults(net, levels)
    log(f"{len(faults)} faults x {len(ds)} images")
    rows = [["layer", "channel", "level", "mismatches"]]
    bad = 0
    for fault, rep in zip(faults, verify_all(net, ds, faults)):
        rows.append([fault.layer, fault.channels[0], fault.level, len(rep.mismatches)])
        bad += bool(rep.mismatches)
    if args.out:
        _write_rows(Path(_out_dir(args.out)) / "equivalence.csv", rows)
    log(f"{bad} faults with mismatches")
    return EXIT_OK if bad == 0 else EXIT_FAIL


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _common(p, dataset=True, jobs=True):
    p.add_argument("--config", help="JSON file supplying any flag (command line wins)")
    if dataset:
        p.add_argument("--dataset", help="dataset file (.qfd)")
        p.add_argument("--subset", type=int, help="use only the first N images")
    if jobs:
        p.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qnnfault", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-model", help="write a synthetic model (and optionally a dataset)")
    _common(p, dataset=False, jobs=False)
    p.add_argument("--preset", choices=["tiny", "desk", "cnv"], default="desk")
    p.add_argument("--precision", default="W1A1", help="e.g. W1A1, W2A2")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threshold-rule", choices=["calibrated", "uniform"], default="calibrated")
    p.add_argument("--out", required=True, help="model directory")
    p.add_argument("--dataset-out", help="also write a self-labelled dataset here")
    p.add_argument("--images", type=int, default=1000)
    p.add_argument("--label-noise", type=float, default=0.2)
    p.add_argument("--pool", type=int, default=1, help="draw N*pool images, keep the N widest-margin")
    p.set_defaults(func=cmd_gen_model)

    p = sub.add_parser("campaign", help="run a stuck-at fault campaign")
    _common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--mode", choices=["whole-channel", "pe-combinations"], default="whole-channel")
    p.add_argument("--levels", nargs="+", help="stuck levels, e.g. --levels -1 1 (default: all)")
    p.add_argument("--layer", nargs="+", help="layer indices (default: all injectable)")
    p.add_argument("-f", type=int, help="folding factor for pe-combinations")
    p.add_argument("--checkpoint", help="result log (default OUT/results.jsonl)")
    p.add_argument("--resume", action="store_true", help="continue an existing checkpoint")
    p.add_argument("--stop-after", type=int, help="stop once N experiments are done")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--dry-run", action="store_true", help="print the experiment count only")
    p.set_defaults(func=cmd_campaign)

    p = sub.add_parser("summarize", help="summary and table CSVs from a result log")
    _common(p, dataset=False, jobs=False)
    p.add_argument("--results", required=True)
    p.add_argument("--label", help="row label for table.csv (default: precision)")
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("replicate", help="plan selective triplication")
    _common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--results", help="whole-channel result log")
    p.add_argument("--threshold", nargs="+", help="tolerated drops in points, e.g. 0.5 1 2")
    p.add_argument("--full-tmr", action="store_true", help="also emit the full-triplication plan")
    p.add_argument("--verify", action="store_true", help="re-run the campaign on each protected net")
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_replicate)

    p = sub.add_parser("schedule", help="fault-aware channel-to-PE assignment")
    _common(p, dataset=False, jobs=False)
    p.add_argument("--matrix", help="accuracy matrix CSV (long form)")
    p.add_argument("--results", help="pe-combinations result log")
    p.add_argument("--layer", nargs="+")
    p.add_argument("--levels", nargs="+", help="levels to combine (default: all in the log)")
    p.add_argument("--time-budget", type=float, help="seconds before settling for the best found")
    p.add_argument("--oracle", action="store_true", help="cross-check against brute force")
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_schedule)

    p = sub.add_parser("pareto", help="cost/error points and their Pareto frontier")
    _common(p, dataset=False, jobs=False)
    p.add_argument("--results", nargs="+", help="whole-channel result logs")
    p.add_argument("--model", nargs="+", help="models, one per result log")
    p.add_argument("--points", nargs="+", help="extra cost CSVs")
    p.add_argument("--threshold", nargs="+")
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_pareto)

    p = sub.add_parser("verify-injection", help="threshold injection vs forced outputs")
    _common(p, jobs=False)
    p.add_argument("--model", required=True)
    p.add_argument("--levels", nargs="+")
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify_injection)
    return parser


def _apply_config(parser, argv):
    """Parse ``argv`` with values from ``--config`` as defaults."""
    argv = list(sys.argv[1:] if argv is None else argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    subparsers = parser._subparsers._group_actions[0].choices
    command = next((a for a in argv if a in subparsers), None)
    if not known.config or command is None:
        return parser.parse_args(argv)
    try:
        cfg = json.loads(Path(known.config).read_text())
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read config {known.config}: {exc}") from None
    if not isinstance(cfg, dict):
        raise UsageError("config must be a JSON object")
    sub = subparsers[command]
    cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
    cfg.pop("command", None)
    unknown = sorted(set(cfg) - {a.dest for a in sub._actions})
    if unknown:
        raise UsageError(f"unknown config keys for {command}: {unknown}")
    # required flags may come from the file
    for a in sub._actions:
        if a.dest in cfg:
            a.required = False
    sub.set_defaults(**cfg)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        return args.func(args)
    except SystemExit as exc:  # argparse usage errors
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    except (UsageError, CheckpointMismatch) as exc:
        log(f"error: {exc}")
        return EXIT_USAGE
    except (QNNFaultError, OSError) as exc:
        log(f"error: {exc}")
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())

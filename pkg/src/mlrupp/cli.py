"""Command-line entry point: ``mlrupp {analyze,gradcheck,shapes,metrics,demo-train,fixtures}``.

Exit codes: 0 success, 1 check failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import costs
from .errors import MlruppError
from .metrics import metrics_report
from .net import MLRUNet, NetCfg, expected_shape_chain
from .suite import render_suite, run_suite, suite_names
from .tensor import Rng, fixture_bytes, load_fixture, parse_fixture, reference_fixture, save_fixture, sha256_file
from .training import DivergenceError, TrainCfg, decrease_fraction, demo_train
from .validate import validate

OK, CHECK_FAILED, USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        obj = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise UsageError("config must be a JSON object")
    return obj


def _emit(args, text: str) -> None:
    if args.out is not None:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------- commands

def cmd_analyze(args) -> int:
    cfg = _load_config(args.config)
    known = {"C", "H", "W", "r", "expansion", "flop_convention", "blocks"}
    unknown = set(cfg) - known
    if unknown:
        raise UsageError(f"unknown analyze config keys {sorted(unknown)}")
    flop = args.flops or cfg.get("flop_convention", "mac")
    report = costs.emit_comparison_tables(
        C=int(cfg.get("C", 64)), H=int(cfg.get("H", 32)), W=int(cfg.get("W", 32)), r=int(cfg.get("r", 16)),
        expansion=cfg.get("expansion", 2), flop_convention=flop, seed=args.seed,
        extra_blocks=cfg.get("blocks", ()))
    unexpected = report.unexpected_discrepancies(costs.load_allowlist())
    if args.format == "json":
        obj = report.to_json()
        validate(obj, "cost_report")
        _emit(args, _dump(obj))
    else:
        _emit(args, costs.render_report(report))
    if unexpected:
        print(f"unexpected discrepancies: {', '.join(unexpected)}", file=sys.stderr)
        return CHECK_FAILED
    return OK


def cmd_gradcheck(args) -> int:
    only = [n for item in args.only or () for n in item.split(",") if n]
    try:
        result = run_suite(only or None, seed=args.seed, faults=args.inject_fault or ())
    except KeyError as exc:
        raise UsageError(exc.args[0]) from None
    if args.format == "json":
        obj = result.to_json()
        validate(obj, "gradcheck_report")
        _emit(args, _dump(obj))
    else:
        _emit(args, render_suite(result))
    if not result.passed:
        print(f"gradient check failed: {', '.join(result.failing())}", file=sys.stderr)
        return CHECK_FAILED
    return OK


def cmd_shapes(args) -> int:
    cfg = NetCfg.from_json(_load_config(args.config))
    model = MLRUNet(cfg, Rng(args.seed))
    chain = model.shape_chain(args.batch)
    expected = expected_shape_chain(cfg, args.batch)
    if args.format == "json":
        obj = {"config": cfg.to_json(), "chain": [{"node": n, "shape": list(s)} for n, s in chain]}
        validate(obj, "shapes")
        _emit(args, _dump(obj))
    else:
        width = max(len(n) for n, _ in chain)
        _emit(args, "".join(f"{n.ljust(width)}  [{', '.join(map(str, s))}]\n" for n, s in chain))
    if chain != expected:
        print("forward shape chain differs from the stride-geometry chain", file=sys.stderr)
        return CHECK_FAILED
    return OK


def _label_volume(path) -> np.ndarray:
    arr = load_fixture(path).numpy()
    while arr.ndim > 3 and arr.shape[0] == 1:
        arr = arr[0]
    if not np.all(arr == np.round(arr)) or arr.min() < 0:
        raise UsageError(f"{path}: label volumes must hold non-negative integer class ids")
    return arr.astype(np.int64)


def cmd_metrics(args) -> int:
    pred, gt = _label_volume(args.pred), _label_volume(args.gt)
    if pred.shape != gt.shape:
        raise UsageError(f"label volumes differ in extent: {pred.shape} vs {gt.shape}")
    num_classes = args.num_classes or max(2, int(max(pred.max(), gt.max())) + 1)
    rows = metrics_report(gt, pred, num_classes)
    obj = {"shape": list(gt.shape), "num_classes": num_classes, "classes": rows}
    if args.format == "json":
        validate(obj, "metrics_report")
        _emit(args, _dump(obj))
    else:
        lines = ["class  dsc       hd95      flags"]
        for r in rows:
            hd = "undefined" if r["hd95"] is None else f"{r['hd95']:.4f}"
            lines.append(f"{r['class_id']:<5}  {r['dsc']:.6f}  {hd:<8}  {','.join(r['flags']) or '-'}")
        _emit(args, "\n".join(lines) + "\n")
    return OK


def cmd_demo_train(args) -> int:
    raw = _load_config(args.config)
    cfg = TrainCfg.from_json(raw)
    overrides = {}
    if args.steps is not None:
        overrides["steps"] = args.steps
    if args.seed_given:
        overrides["seed"] = args.seed
    if overrides:
        cfg = TrainCfg.from_json(dict(cfg.to_json(), **overrides))
    out_dir = Path(args.out) if args.out is not None else None
    trace_path = ckpt = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        trace_path, ckpt = out_dir / "trace.jsonl", out_dir / "checkpoint"
    try:
        _, trace = demo_train(cfg, trace_path, ckpt)
    except DivergenceError as exc:
        print(f"training diverged at step {exc.step}", file=sys.stderr)
        return CHECK_FAILED
    summary = {
        "config": cfg.to_json(),
        "steps": cfg.steps,
        "final": trace[-1],
        "decrease_fraction": decrease_fraction(trace),
        "trace": None if trace_path is None else str(trace_path),
        "checkpoint": None if ckpt is None else str(ckpt),
    }
    validate(summary, "train_summary")
    if out_dir is not None:
        (out_dir / "summary.json").write_text(_dump(summary))
    if args.format == "json":
        sys.stdout.write(_dump(summary))
    else:
        f = trace[-1]
        sys.stdout.write(f"steps {cfg.steps}  final loss {f['loss']:.6f}  dice {f['dice']:.4f}  "
                         f"loss decreased on {100 * summary['decrease_fraction']:.1f}% of steps after 20\n")
    return OK


def cmd_fixtures(args) -> int:
    if args.write_reference:
        save_fixture(reference_fixture(), args.write_reference)
    paths = list(args.paths) + ([args.write_reference] if args.write_reference else [])
    if not paths:
        raise UsageError("give fixture paths to validate or --write-reference PATH")
    files, bad = [], False
    for p in paths:
        entry = {"path": str(p)}
        try:
            raw = Path(p).read_bytes()
            t = parse_fixture(raw)
        except FileNotFoundError:
            raise UsageError(f"fixture not found: {p}") from None
        except MlruppError as exc:
            entry.update(valid=False, error=str(exc))
            bad = True
        else:
            entry.update(valid=True, shape=list(t.shape), layout=list(t.layout), sha256=sha256_file(p),
                         roundtrip_bitwise=fixture_bytes(t) == raw)
            bad |= not entry["roundtrip_bitwise"]
        files.append(entry)
    obj = {"files": files}
    if args.format == "json":
        validate(obj, "fixtures_report")
        _emit(args, _dump(obj))
    else:
        lines = []
        for f in files:
            if f["valid"]:
                rt = "ok" if f["roundtrip_bitwise"] else "MISMATCH"
                lines.append(f"{f['path']}  shape {f['shape']}  sha256 {f['sha256']}  roundtrip {rt}")
            else:
                lines.append(f"{f['path']}  INVALID  {f['error']}")
        _emit(args, "\n".join(lines) + "\n")
    return USAGE if bad else OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--seed", type=int, default=None, help="RNG seed (default 0; demo-train uses its config)")
    shared.add_argument("--config", help="JSON config file")
    shared.add_argument("--format", choices=("json", "table"), default="table")
    shared.add_argument("--out", help="output file (directory for demo-train)")

    parser = argparse.ArgumentParser(prog="mlrupp", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", parents=[shared], help="cost-model comparison tables")
    p.add_argument("--flops", choices=costs.FLOP_CONVENTIONS, help="FLOP convention (default mac)")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("gradcheck", parents=[shared], help="finite-difference gradient suite")
    p.add_argument("--only", action="append", metavar="NODE",
                   help=f"run only these nodes (repeatable or comma separated): {', '.join(suite_names())}")
    p.add_argument("--inject-fault", action="append", metavar="OP", choices=("sigmoid",),
                   help="corrupt an op's vjp to exercise failure reporting")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("shapes", parents=[shared], help="forward shape chain of the network")
    p.add_argument("--batch", type=int, default=1)
    p.set_defaults(func=cmd_shapes)

    p = sub.add_parser("metrics", parents=[shared], help="Dice and HD95 between two label fixtures")
    p.add_argument("pred")
    p.add_argument("gt")
    p.add_argument("--num-classes", type=int)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("demo-train", parents=[shared], help="toy training run on synthetic blobs")
    p.add_argument("--steps", type=int)
    p.set_defaults(func=cmd_demo_train)

    p = sub.add_parser("fixtures", parents=[shared], help="validate and round-trip fixture files")
    p.add_argument("paths", nargs="*")
    p.add_argument("--write-reference", metavar="PATH", help="write the seeded reference fixture first")
    p.set_defaults(func=cmd_fixtures)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    args.seed_given = args.seed is not None
    if args.seed is None:
        args.seed = 0
    try:
        return args.func(args)
    except (UsageError, MlruppError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE


if __name__ == "__main__":
    sys.exit(main())

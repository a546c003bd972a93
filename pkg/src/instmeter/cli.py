"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 data error.  Files carry joules and
seconds; mJ/ms appear only in the human-readable summaries.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .cfgcore import extract_loops, loops_to_json, relation_graph
from .disasm import CpiTable, build_bin_cfg, get_arch, parse_listing
from .instlib import InstructionLibrary, atomic_write, build_library, load_kernel_spec, model_cycles
from .mapper import map_function
from .modelparse import load_model, lower_layers
from .predictor import (
    LinearPredictor,
    Sample,
    error_percentiles,
    predict,
    relative_error,
    subsample_fit,
)
from .srcfeat import parse_src_cfg

log = logging.getLogger("instmeter")

DATASET_HEADER = ["model_id", "cycles", "energy_j", "latency_s"]
TARGET_COLUMN = {"energy": "energy_j", "latency": "latency_s"}
TARGET_NAME = {"energy": "Energy", "latency": "Latency"}
DEFAULT_SEED = 42
REPORT_PERCENTILES = (50, 80, 90, 95)


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


@dataclass
class Dataset:
    samples: list[Sample]
    skipped: int


def default_seed() -> int:
    raw = os.environ.get("INSTMETER_SEED")
    if raw is None or raw == "":
        return DEFAULT_SEED
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"INSTMETER_SEED must be an integer, got {raw!r}") from None


def _number(text: str, path, lineno: int, column: str, integer=False):
    try:
        value = float(text)
    except ValueError:
        raise DataError(f"{path}:{lineno}: column {column}: {text!r} is not a number") from None
    if not math.isfinite(value):
        raise DataError(f"{path}:{lineno}: column {column}: value must be finite")
    if integer:
        if not value.is_integer():
            raise DataError(f"{path}:{lineno}: column {column}: {text!r} is not an integer")
        return int(value)
    return value


def load_dataset(path, target: str = "energy") -> Dataset:
    if target not in TARGET_COLUMN:
        raise UsageError(f"target must be one of {sorted(TARGET_COLUMN)}")
    column = TARGET_COLUMN[target]
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != DATASET_HEADER:
            raise DataError(f"{path}:1: header must be exactly {','.join(DATASET_HEADER)}")
        samples, skipped = [], 0
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(DATASET_HEADER):
                raise DataError(f"{path}:{lineno}: expected {len(DATASET_HEADER)} fields, got {len(row)}")
            rec = dict(zip(DATASET_HEADER, (c.strip() for c in row)))
            if not rec["model_id"]:
                raise DataError(f"{path}:{lineno}: empty model_id")
            if rec["cycles"] == "":
                raise DataError(f"{path}:{lineno}: column cycles is empty")
            cycles = _number(rec["cycles"], path, lineno, "cycles", integer=True)
            for other in TARGET_COLUMN.values():
                if rec[other] != "":
                    _number(rec[other], path, lineno, other)
            if rec[column] == "":
                skipped += 1
                continue
            try:
                samples.append(Sample(rec["model_id"], cycles, _number(rec[column], path, lineno, column)))
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
    return Dataset(samples, skipped)


def dumps(doc) -> str:
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def save_report(path, report) -> None:
    """Write a report atomically: JSON for dicts/lists, CSV text passed as str."""
    text = report if isinstance(report, str) else dumps(report)
    atomic_write(path, text)


def _emit(args, text: str) -> None:
    if args.out:
        save_report(args.out, text)
    else:
        sys.stdout.write(text)


def _read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from None


def _cpi(args, fallback=None) -> CpiTable | None:
    if args.cpi:
        return CpiTable.load(args.cpi)
    return fallback


# -- subcommands --------------------------------------------------------------


def cmd_parse_disasm(args) -> int:
    res = parse_listing(Path(args.listing).read_text())
    fns = [f for f in res.functions if not args.function or f.symbol == args.function]
    if args.function and not fns:
        raise DataError(f"{args.listing}: no function named {args.function!r}")
    _emit(args, dumps({"functions": [f.to_dict() for f in fns], "skipped_lines": res.skipped}))
    return 0


def cmd_extract_loops(args) -> int:
    path = Path(args.input)
    out = []
    if path.suffix == ".json":
        src = parse_src_cfg(_read_json(path))
        loops = extract_loops(src.cfg)
        out.append({"function": src.name, **json.loads(loops_to_json(loops, relation_graph(loops)))})
    else:
        arch = get_arch(args.arch)
        for fn in parse_listing(path.read_text()).functions:
            if args.function and fn.symbol != args.function:
                continue
            loops = extract_loops(build_bin_cfg(fn, arch))
            out.append({"function": fn.symbol, **json.loads(loops_to_json(loops, relation_graph(loops)))})
        if args.function and not out:
            raise DataError(f"{path}: no function named {args.function!r}")
    _emit(args, dumps({"functions": out}))
    return 0


def cmd_map(args) -> int:
    if args.kernel:
        _, src, fn, _ = load_kernel_spec(Path(args.kernel))
    else:
        if not (args.src and args.disasm):
            raise UsageError("map needs --kernel, or both --src and --disasm")
        src = parse_src_cfg(_read_json(args.src))
        symbol = args.function or src.name
        fns = [f for f in parse_listing(Path(args.disasm).read_text()).functions if f.symbol == symbol]
        if not fns:
            raise DataError(f"{args.disasm}: no function named {symbol!r}")
        fn = fns[0]
    res = map_function(src, fn, _cpi(args), args.seed, args.arch)
    doc = res.to_dict()
    doc["trials_used"] = res.trials_used
    if args.verbose:
        doc["diagnostics"] = res.diagnostics
    _emit(args, dumps(doc))
    return 0


def cmd_build_lib(args) -> int:
    lib = build_library(args.manifest, seed=args.seed, cpi_path=args.cpi, arch=args.arch_given)
    if not args.out:
        raise UsageError("build-lib needs --out")
    save_report(args.out, lib.to_json())
    log.info("wrote %d kernel profiles to %s", len(lib.kernels), args.out)
    return 0


def _model_ops(path):
    return lower_layers(load_model(_read_json(path)))


def cmd_estimate(args) -> int:
    lib = InstructionLibrary.load(args.lib)
    total, parts = model_cycles(_model_ops(args.model), lib)
    doc = {"model": str(args.model), "total_cycles": total, "operators": parts}
    if args.out:
        save_report(args.out, doc)
    else:
        for p in parts:
            print(f"{p['index']:>3}  {p['op_type']:<15} {p['cycles']:>14}  {'+'.join(p['kernels'])}")
        print(f"total cycles: {total}")
    return 0


def _dataset(args) -> Dataset:
    ds = load_dataset(args.dataset, args.target)
    if ds.skipped:
        log.warning("%s: skipped %d row(s) without %s", args.dataset, ds.skipped, TARGET_COLUMN[args.target])
    return ds


def cmd_fit(args) -> int:
    ds = _dataset(args)
    p = subsample_fit(ds.samples, n_seeds=args.n_seeds, target=TARGET_NAME[args.target], seed=args.seed)
    p.fit_report["skipped_rows"] = ds.skipped
    if args.out:
        save_report(args.out, p.to_dict())
    else:
        sys.stdout.write(dumps(p.to_dict()))
    return 0


def _display(value: float, target: str) -> str:
    return f"{value * 1e3:.6g} {'mJ' if target == 'Energy' else 'ms'}"


def cmd_predict(args) -> int:
    p = LinearPredictor.from_dict(_read_json(args.predictor))
    if args.cycles is not None:
        cycles = args.cycles
    elif args.model and args.lib:
        cycles, _ = model_cycles(_model_ops(args.model), InstructionLibrary.load(args.lib))
    else:
        raise UsageError("predict needs --cycles, or --model with --lib")
    value = predict(p, cycles)
    doc = {"target": p.target, "cycles": cycles, "prediction": value}
    if args.out:
        save_report(args.out, doc)
    else:
        print(f"{p.target.lower()}: {value!r} ({_display(value, p.target)}) for {cycles} cycles")
    return 0


def cmd_eval(args) -> int:
    ds = _dataset(args)
    samples = ds.samples
    if args.predictor:
        p = LinearPredictor.from_dict(_read_json(args.predictor))
        train_ids: list[str] = []
        test = samples
    else:
        if len(samples) <= args.train:
            raise DataError(f"{args.dataset}: need more than {args.train} rows to hold out a test set")
        rng = np.random.default_rng(args.seed)
        pick = sorted(int(i) for i in rng.choice(len(samples), size=args.train, replace=False))
        train = [samples[i] for i in pick]
        test = [s for i, s in enumerate(samples) if i not in set(pick)]
        p = subsample_fit(train, n_seeds=args.n_seeds, target=TARGET_NAME[args.target], seed=args.seed)
        train_ids = [s.model_id for s in train]
    rows = []
    for s in test:
        pred = predict(p, s.cycles)
        rows.append((s.model_id, s.cycles, s.measured, pred, relative_error(pred, s.measured)))
    errors = [r[4] for r in rows]
    if not errors:
        raise DataError(f"{args.dataset}: no rows to evaluate")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model_id", "cycles", "truth", "prediction", "relative_error_pct"])
    for r in rows:
        w.writerow([r[0], r[1], repr(r[2]), repr(r[3]), repr(r[4])])
    pct = error_percentiles(errors, REPORT_PERCENTILES)
    summary = {
        "target": p.target,
        "a": p.a,
        "b": p.b,
        "seed": args.seed,
        "train": train_ids,
        "n_test": len(rows),
        "skipped_rows": ds.skipped,
        "mean_relative_error_pct": float(np.mean(errors)),
        "percentiles": {f"p{q}": v for q, v in zip(REPORT_PERCENTILES, pct)},
    }
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    save_report(out / "eval.csv", buf.getvalue())
    save_report(out / "eval.json", summary)
    print(f"{len(rows)} test models, mean {summary['mean_relative_error_pct']:.2f}%, "
          f"p90 {summary['percentiles']['p90']:.2f}%  -> {out / 'eval.csv'}, {out / 'eval.json'}")
    return 0


# -- argument parsing ---------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--arch", default=None, help="cortex-m (default) or riscv")
    common.add_argument("--seed", type=int, default=None, help="RNG seed (default $INSTMETER_SEED, else 42)")
    common.add_argument("--target", choices=sorted(TARGET_COLUMN), default="energy")
    common.add_argument("--out", help="output file (directory for eval)")
    common.add_argument("--cpi", help="CPI table JSON")
    common.add_argument("--verbose", "-v", action="store_true")

    parser = _Parser(prog="instmeter", description="Static cycle counts and linear energy/latency models for ML kernels.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("parse-disasm", parents=[common], help="parse an objdump listing to JSON")
    p.add_argument("listing")
    p.add_argument("--function")
    p.set_defaults(func=cmd_parse_disasm)

    p = sub.add_parser("extract-loops", parents=[common], help="natural loops and relation graph")
    p.add_argument("input", help="objdump listing, or a source CFG .json")
    p.add_argument("--function")
    p.set_defaults(func=cmd_extract_loops)

    p = sub.add_parser("map", parents=[common], help="map source loops to binary loops")
    p.add_argument("--kernel", help="kernel spec JSON naming the source CFG and listing")
    p.add_argument("--src")
    p.add_argument("--disasm")
    p.add_argument("--function", help="symbol in the listing (default: source function name)")
    p.set_defaults(func=cmd_map)

    p = sub.add_parser("build-lib", parents=[common], help="build the instruction library from a manifest")
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=cmd_build_lib)

    p = sub.add_parser("estimate", parents=[common], help="cycles of a model from the library")
    p.add_argument("--model", required=True)
    p.add_argument("--lib", required=True)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("fit", parents=[common], help="fit a = per-cycle cost, b = fixed overhead")
    p.add_argument("--dataset", required=True)
    p.add_argument("--n-seeds", type=int, default=10)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", parents=[common], help="apply a fitted predictor")
    p.add_argument("--predictor", required=True)
    p.add_argument("--cycles", type=int)
    p.add_argument("--model")
    p.add_argument("--lib")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", parents=[common], help="few-shot fit and held-out error report")
    p.add_argument("--dataset", required=True)
    p.add_argument("--predictor", help="evaluate this predictor on every row instead of fitting")
    p.add_argument("--train", type=int, default=5, help="training rows drawn with --seed (default 5)")
    p.add_argument("--n-seeds", type=int, default=10)
    p.set_defaults(func=cmd_eval)
    return parser


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        args.arch_given = args.arch
        args.arch = args.arch or "cortex-m"
        get_arch(args.arch)
        if args.seed is None:
            args.seed = default_seed()
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        print("usage: instmeter COMMAND [options]; see instmeter --help", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DataError, ValueError, KeyError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        if isinstance(exc, KeyError):
            msg = f"missing field {msg!r}"
        print(f"error: {msg}", file=sys.stderr)
        return 2


def main(argv=None) -> int:
    return run(argv)


if __name__ == "__main__":
    sys.exit(main())

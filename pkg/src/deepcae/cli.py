"""Command-line entry point: ``deepcae {preprocess,train,embed,benchmark,compare,gradcheck}``.

Exit codes: 0 success, 2 I/O, 3 config/schema, 4 numerical divergence,
5 oracle failure. Progress goes to stderr; results only to files.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import tempfile
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import benchmark as B
from .gradcheck import run_gradcheck
from .models import canonical_variant, dumps_model, encode, loads_model
from .preprocess import PreprocessPlan, SchemaError, infer_schema, read_csv
from .train import DivergedError

log = logging.getLogger("deepcae")

EXIT_OK, EXIT_IO, EXIT_CONFIG, EXIT_DIVERGED, EXIT_ORACLE = 0, 2, 3, 4, 5


def write_atomic(path: str | Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def _load_overrides(spec: str | None) -> dict:
    if not spec:
        return {}
    if os.path.exists(spec):
        with open(spec, encoding="utf-8") as fh:
            return json.load(fh)
    return json.loads(spec)


def cmd_preprocess(args) -> int:
    header, rows = read_csv(args.csv)
    schema = infer_schema(header, rows, _load_overrides(args.overrides), target=args.target)
    plan = PreprocessPlan.fit(header, schema, rows)
    kept = plan.filter_rows(rows)
    X, names = plan.transform(kept)
    write_atomic(args.out_plan, plan.dumps())
    write_atomic(args.out_matrix, _csv_text(names, ([_fmt(v) for v in row] for row in X)))
    n_in = sum(c.kind != "target" for c in schema)
    print(f"{args.csv}: {len(kept)} rows, {n_in} input columns -> {len(names)} features", file=sys.stderr)
    return EXIT_OK


def _dataset(cfg: B.ExperimentConfig, name: str | None) -> B.DatasetEntry:
    if name is None:
        if len(cfg.datasets) != 1:
            raise B.ConfigError("--dataset is required when the config lists several datasets")
        return cfg.datasets[0]
    for ds in cfg.datasets:
        if ds.name == name:
            return ds
    raise B.ConfigError(f"dataset {name!r} not in config")


def cmd_train(args) -> int:
    cfg = B.ExperimentConfig.load(args.config)
    entry = _dataset(cfg, args.dataset)
    variant = canonical_variant(args.variant)
    seed = args.seed if args.seed is not None else B.derive_seed(cfg.seed, entry.name, 0)
    if args.lam is not None:
        cfg.train = replace(cfg.train, lam=args.lam)
    out = Path(args.out or cfg.out or ".")
    data = B.prepare_dataset(entry, seed, cfg.test_fraction, cfg.val_fraction)
    try:
        res = B.train_autoencoder(data, variant, cfg, seed)
    except DivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    stem = f"{entry.name}_{variant}_seed{seed}"
    write_atomic(out / f"{stem}.model.json", dumps_model(res.model))
    write_atomic(out / f"{stem}.plan.json", data.plan.dumps())
    train_log = {
        "schema_version": 1, "dataset": entry.name, "variant": variant, "seed": seed,
        "config": asdict(res.config), "effective_lambda": res.model.lam, "stopped_epoch": res.stopped_epoch,
        "best_epoch": res.best_epoch, "best_val_recon": res.best_val_recon, "early_stopped": res.early_stopped,
        "history": [asdict(h) for h in res.history],
    }
    write_atomic(out / f"{stem}.train.json", json.dumps(train_log, indent=1) + "\n")
    print(f"{stem}: {res.stopped_epoch} epochs, best val recon {res.best_val_recon:.6g} "
          f"at epoch {res.best_epoch}, {res.wall_time:.2f}s", file=sys.stderr)
    return EXIT_OK


def cmd_embed(args) -> int:
    with open(args.model, encoding="utf-8") as fh:
        model = loads_model(fh.read())
    with open(args.plan, encoding="utf-8") as fh:
        plan = PreprocessPlan.loads(fh.read())
    header, rows = read_csv(args.csv)
    target = plan.target
    if target is not None and target not in header:
        # unlabeled rows: fill the target slot so column positions line up
        header = header + [target]
        rows = [r + [""] for r in rows]
        target = None
    if header != plan.columns:
        raise SchemaError(f"CSV columns {header} do not match the plan's {plan.columns}")
    if target is not None:
        j = plan.columns.index(target)
        plan_rows = [r[:j] + ["0"] + r[j + 1:] for r in rows]
    else:
        plan_rows = rows
    X, _ = plan.transform(plan_rows)
    Z, _ = encode(model, X)
    cols = ["row"] + [f"e{i}" for i in range(Z.shape[1])] + ([target] if target else [])
    body = []
    for i, z in enumerate(Z):
        line = [str(i)] + [_fmt(v) for v in z]
        if target:
            line.append(rows[i][plan.columns.index(target)])
        body.append(line)
    write_atomic(args.out, _csv_text(cols, body))
    print(f"embedded {len(rows)} rows into {Z.shape[1]} dimensions -> {args.out}", file=sys.stderr)
    return EXIT_OK


def cmd_benchmark(args) -> int:
    cfg = B.ExperimentConfig.load(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    out = Path(args.out or cfg.out or "benchmark_out")
    try:
        rows = B.run_benchmark(cfg, jobs=args.jobs)
    except DivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    aggs = B.aggregate(rows, cfg.bootstrap_resamples, cfg.seed)
    write_atomic(out / "report.csv", _csv_text(B.REPORT_COLUMNS,
                                               ([_fmt(r[c]) for c in B.REPORT_COLUMNS] for r in rows)))
    write_atomic(out / "aggregate.json", json.dumps(
        {"schema_version": B.REPORT_SCHEMA_VERSION, "baseline": B.BASELINE,
         "models": {m: asdict(a) for m, a in aggs.items()}}, indent=1) + "\n")
    summary = B.summary_table(rows, aggs)
    write_atomic(out / "summary.txt", summary)
    sys.stderr.write(summary)
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = B.ExperimentConfig.load(args.config)
    seeds = [B.derive_seed(cfg.seed, "compare", r) for r in range(cfg.runs)]
    try:
        rep = B.deepcae_vs_stacked_report(cfg.datasets, seeds, cfg, num_layers=args.layers)
    except DivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    out = Path(args.out or cfg.out or "compare_out")
    write_atomic(out / "comparison.json", json.dumps(
        {"schema_version": 1, "cells": rep.cells, "per_dataset": rep.per_dataset, "geomean": rep.geomean,
         "ratio": rep.ratio, "win_fraction": rep.win_fraction, "runtime": rep.runtime}, indent=1) + "\n")
    write_atomic(out / "comparison.txt", rep.to_text())
    sys.stderr.write(rep.to_text())
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    rep = run_gradcheck(args.dims, args.layers, args.seed, corrupt=args.corrupt)
    print(f"penalty vs finite-difference Jacobian: max rel err {rep.penalty_error:.3e}", file=sys.stderr)
    print(f"loss gradient vs finite differences:   rel err {rep.gradient_error:.3e}", file=sys.stderr)
    for note in rep.notes:
        print(note, file=sys.stderr)
    print("OK" if rep.ok else f"FAILED (tolerance {rep.tolerance:g})", file=sys.stderr)
    return EXIT_OK if rep.ok else EXIT_ORACLE


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="deepcae", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("preprocess", help="fit a preprocessing plan and write the encoded matrix")
    s.add_argument("csv")
    s.add_argument("--target", help="target column, excluded from features")
    s.add_argument("--overrides", help="JSON object or file mapping column -> kind")
    s.add_argument("--out-plan", required=True)
    s.add_argument("--out-matrix", required=True)
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("train", help="train one autoencoder on one configured dataset")
    s.add_argument("--config", required=True)
    s.add_argument("--dataset")
    s.add_argument("--variant", default="deepcae", choices=["standard", "deepcae", "stacked", "stacked_cae"])
    s.add_argument("--seed", type=int)
    s.add_argument("--lambda", dest="lam", type=float)
    s.add_argument("--out")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("embed", help="write embeddings for a CSV with a trained model")
    s.add_argument("--model", required=True)
    s.add_argument("--plan", required=True)
    s.add_argument("--csv", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_embed)

    s = sub.add_parser("benchmark", help="run the reconstruction + downstream benchmark")
    s.add_argument("--config", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--out")
    s.set_defaults(func=cmd_benchmark)

    s = sub.add_parser("compare", help="DeepCAE vs StackedCAE comparison with runtime table")
    s.add_argument("--config", required=True)
    s.add_argument("--layers", type=int, default=2)
    s.add_argument("--out")
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("gradcheck", help="finite-difference oracle for the penalty and gradients")
    s.add_argument("--dims", type=int, default=6)
    s.add_argument("--layers", type=int, default=2)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--corrupt", type=float, default=0.0, help=argparse.SUPPRESS)
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (OSError, UnicodeDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (SchemaError, B.ConfigError, json.JSONDecodeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

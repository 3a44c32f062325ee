"""Command line entry point.

Exit codes: 0 success, 2 config/usage error, 3 I/O error, 4 pipeline failure.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from . import config as cfgmod
from . import core, datagen, fgccdb, metrics, nn, report
from .errors import ConfigInvalid, FormatError, LabelOutOfRange

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_PIPELINE = 0, 2, 3, 4


def _load_config(args):
    cfg = cfgmod.parse_config(args.config)
    if getattr(args, "seed_override", None):
        try:
            seeds = tuple(int(s) for s in args.seed_override.split(",") if s.strip())
        except ValueError:
            raise ConfigInvalid(f"bad seed list {args.seed_override!r}", "--seed-override") from None
        if not seeds:
            raise ConfigInvalid("empty seed list", "--seed-override")
        cfg = replace(cfg, seeds=seeds)
    return cfg


def cmd_gen(args) -> int:
    cfg = _load_config(args)
    dataset = cfg.pipeline.dataset
    if not isinstance(dataset, datagen.GeneratorConfig):
        raise ConfigInvalid("gen needs a generator config, not a dataset path", "dataset.path")
    out = cfgmod.resolve_output_dir(cfg, args.out)
    os.makedirs(out, exist_ok=True)
    splits = datagen.generate(dataset)
    for name, ds in splits.items():
        datagen.save_dataset(ds, os.path.join(out, f"{name}.txt"))
        print(f"wrote {os.path.join(out, name + '.txt')} (n={ds.N} d={ds.d} c={ds.C} shortcuts={ds.S})")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _load_config(args)
    out = cfgmod.resolve_output_dir(cfg, args.out)
    rep, errors = report.run_experiment(cfg, out, jobs=args.jobs, save_artifacts=not args.no_artifacts)
    _print_summary(rep)
    print(f"report: {os.path.join(out, 'report.json')}")
    if errors:
        for e in errors:
            print(f"seed {e['seed']} failed: {e['error']}", file=sys.stderr)
        return EXIT_PIPELINE
    return EXIT_OK


def _print_summary(rep):
    agg = rep["aggregate"]
    for group in ("erm", "debiased", "supervised"):
        if group in agg and "wga" in agg[group]:
            s = agg[group]["wga"]
            print(f"{group:>10} wga  mean={s['mean']:.4f} std={s['std']:.4f} n={s['n']}")
    if "mst" in agg:
        s = agg["mst"]["smallest_recall"]
        print(f"{'mst':>10} smallest-mode recall mean={s['mean']:.4f}")


def read_modes_csv(path):
    """Rows ``sample_id,bias_label,class_label`` after a header line."""
    ids, s, y = [], [], []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["sample_id", "bias_label", "class_label"]:
            raise FormatError("expected header 'sample_id,bias_label,class_label'", 1)
        for row in reader:
            lineno = reader.line_num
            if len(row) != 3:
                raise FormatError(f"expected 3 fields, got {len(row)}", lineno)
            try:
                sid, b, c = row[0].strip(), int(row[1]), int(row[2])
            except ValueError:
                raise FormatError("labels must be integers", lineno) from None
            if b < 0 or c < 0:
                raise FormatError("labels must be nonnegative", lineno)
            ids.append(sid)
            s.append(b)
            y.append(c)
    if not ids:
        raise FormatError("no data rows", 2)
    return ids, np.array(s, np.int64), np.array(y, np.int64)


def cmd_weights(args) -> int:
    try:
        ids, s, y = read_modes_csv(args.modes)
    except FormatError as exc:
        raise ConfigInvalid(str(exc), args.modes) from None
    C = args.classes or max(2, int(max(s.max(), y.max())) + 1)
    try:
        dw = fgccdb.derive_weights_from_modes(s, y, C)
    except LabelOutOfRange as exc:
        raise ConfigInvalid(str(exc), args.modes) from None
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    lines = ["sample_id,weight"] + [f"{i},{w!r}" for i, w in zip(ids, dw.sample_weights.tolist())]
    report.write_atomic(os.path.join(out, "weights.csv"), "\n".join(lines) + "\n")
    diag = dw.diagnostics()
    report.write_atomic(os.path.join(out, "weights_diagnostics.json"), report.dumps(diag))
    print(f"wrote {os.path.join(out, 'weights.csv')} and weights_diagnostics.json "
          f"(MI {diag['mi_original_joint']:.6g} -> {diag['mi_multiplier_joint']:.3g} nats)")
    return EXIT_OK


SWEEPABLE = ("gamma", "beta", "repeats", "rho")


def _apply_sweep(cfg, param, value):
    p = cfg.pipeline
    if param == "gamma":
        p = replace(p, mst=replace(p.mst, gamma=float(value)))
    elif param == "beta":
        p = replace(p, mst=replace(p.mst, beta=float(value)))
    elif param == "repeats":
        p = replace(p, mst=replace(p.mst, repeats=int(value)))
    elif param == "rho":
        if not isinstance(p.dataset, datagen.GeneratorConfig):
            raise ConfigInvalid("rho sweep needs a generator config", "dataset.path")
        g = replace(p.dataset, rho=tuple(float(value) for _ in p.dataset.rho))
        g.validate()
        p = replace(p, dataset=g)
    p.mst.validate()
    return replace(cfg, pipeline=p)


def run_sweep(cfg, param, values, out, jobs=1):
    if param not in SWEEPABLE:
        raise ConfigInvalid(f"must be one of {', '.join(SWEEPABLE)}", "--param")
    if not values:
        raise ConfigInvalid("empty value list", "--values")
    rows = []
    errors = []
    for v in values:
        try:
            sub = _apply_sweep(cfg, param, v)
        except ValueError as exc:
            raise ConfigInvalid(str(exc), f"--values {v}") from None
        sub_out = os.path.join(out, f"{param}_{v}")
        rep, errs = report.run_experiment(sub, sub_out, jobs=jobs, save_artifacts=False)
        errors += errs
        agg = rep["aggregate"]
        row = {"value": v}
        for key, path in (
            ("smallest_recall", ("mst", "smallest_recall")),
            ("smallest_f1", ("mst", "smallest_f1")),
            ("erm_wga", ("erm", "wga")),
            ("debiased_wga", ("debiased", "wga")),
        ):
            stat = report._get(agg, path)
            row[key] = stat["mean"] if stat else None
        rows.append(row)
    table = {"schema": report.SCHEMA_VERSION, "parameter": param, "config_digest": cfg.digest(), "rows": rows}
    report.write_atomic(os.path.join(out, "sweep.json"), report.dumps(table))
    return table, errors


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    values = [v for v in (args.values or "").split(",") if v.strip()]
    out = cfgmod.resolve_output_dir(cfg, args.out)
    table, errors = run_sweep(cfg, args.param, values, out, jobs=args.jobs)
    print(f"{args.param:>8} {'recall':>8} {'f1':>8} {'erm_wga':>8} {'deb_wga':>8}")
    for r in table["rows"]:
        cells = [f"{r[k]:8.4f}" if r[k] is not None else f"{'-':>8}"
                 for k in ("smallest_recall", "smallest_f1", "erm_wga", "debiased_wga")]
        print(f"{r['value']:>8} " + " ".join(cells))
    return EXIT_PIPELINE if errors else EXIT_OK


def cmd_eval(args) -> int:
    model = nn.load_model(args.model)
    ds = datagen.load_dataset(args.data)
    freqs = metrics.group_frequencies(datagen.load_dataset(args.train_data)) if args.train_data else None
    pred = model.predict_labels(ds.features)
    g = metrics.grouped_accuracy(pred, ds, freqs)
    out = g.to_dict()
    if ds.S == 2:
        out["gaps"] = metrics.shortcut_gaps(g)
    sys.stdout.write(report.dumps(out))
    return EXIT_OK


def read_joint_csv(path):
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or row[0].lstrip().startswith("#"):
                continue
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise FormatError("non-numeric entry", lineno) from None
    if not rows or len({len(r) for r in rows}) != 1:
        raise FormatError("joint must be a nonempty rectangular matrix")
    return np.array(rows)


def cmd_mi(args) -> int:
    try:
        J = read_joint_csv(args.joint)
        mi = core.mutual_information(J)
    except (FormatError, ValueError) as exc:
        raise ConfigInvalid(str(exc), args.joint) from None
    print(report._fmt_float(mi))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dbforge", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True):
        if needs_config:
            p.add_argument("--config", required=True)
        p.add_argument("--out")
        p.add_argument("--jobs", type=int, default=1)
        p.add_argument("--seed-override")

    p = sub.add_parser("gen", help="write train/val/test dataset files")
    common(p)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("run", help="run the full pipeline for every seed")
    common(p)
    p.add_argument("--no-artifacts", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("weights", help="mode weights from a sample_id,bias_label,class_label CSV")
    p.add_argument("--modes", required=True)
    p.add_argument("--out")
    p.add_argument("--classes", type=int)
    p.set_defaults(func=cmd_weights)

    p = sub.add_parser("sweep", help="rerun the pipeline over a parameter grid")
    common(p)
    p.add_argument("--param", required=True)
    p.add_argument("--values", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("eval", help="grouped accuracy of a checkpoint on a dataset file")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--train-data")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("mi", help="mutual information of a CSV joint matrix")
    p.add_argument("--joint", required=True)
    p.set_defaults(func=cmd_mi)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "jobs", 1) is not None and getattr(args, "jobs", 1) < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigInvalid as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FormatError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except Exception as exc:
        print(f"pipeline failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_PIPELINE


if __name__ == "__main__":
    sys.exit(main())

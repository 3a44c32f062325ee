"""Report serialization and multi-seed orchestration.

Reports are JSON with sorted keys and floats written with 17 significant
digits, so identical inputs give byte-identical files and every double
survives a load/dump cycle.
"""
from __future__ import annotations

import json
import logging
import math
import os
import traceback
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import fgccdb, nn
from .config import ExperimentConfig

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1


def _fmt_float(x: float) -> str:
    if not math.isfinite(x):
        return "null"
    s = format(x, ".17g")
    if not any(ch in s for ch in ".en"):
        s += ".0"
    return s


def _encode(obj, indent, level, out):
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if obj is None or isinstance(obj, bool):
        out.append("null" if obj is None else ("true" if obj else "false"))
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        out.append(_fmt_float(float(obj)))
    elif isinstance(obj, str):
        out.append(json.dumps(obj))
    elif isinstance(obj, dict):
        if not obj:
            out.append("{}")
            return
        out.append("{\n")
        items = sorted(obj.items(), key=lambda kv: str(kv[0]))
        for k, (key, val) in enumerate(items):
            out.append(f"{pad}{json.dumps(str(key))}: ")
            _encode(val, indent, level + 1, out)
            out.append(",\n" if k < len(items) - 1 else "\n")
        out.append(end + "}")
    elif isinstance(obj, (list, tuple, np.ndarray)):
        seq = obj.tolist() if isinstance(obj, np.ndarray) else obj
        if not seq:
            out.append("[]")
            return
        if all(isinstance(v, (int, float, bool, np.number)) or v is None for v in seq):
            out.append("[")
            for k, v in enumerate(seq):
                _encode(v, indent, level, out)
                if k < len(seq) - 1:
                    out.append(", ")
            out.append("]")
            return
        out.append("[\n")
        for k, v in enumerate(seq):
            out.append(pad)
            _encode(v, indent, level + 1, out)
            out.append(",\n" if k < len(seq) - 1 else "\n")
        out.append(end + "]")
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj, indent: int = 2) -> str:
    out = []
    _encode(obj, indent, 0, out)
    return "".join(out) + "\n"


def write_atomic(path, text: str) -> None:
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _mean_std(vals):
    vals = [v for v in vals if v is not None]
    if not vals:
        return {"mean": None, "std": None, "n": 0}
    a = np.asarray(vals, dtype=np.float64)
    return {"mean": float(a.mean()), "std": float(a.std(ddof=1)) if a.size > 1 else 0.0, "n": int(a.size)}


def _get(rec, path):
    cur = rec
    for part in path:
        if not isinstance(cur, dict) or part not in cur:
            return None
        cur = cur[part]
    return cur


AGGREGATE_FIELDS = {
    ("erm", "wga"): ("erm", "wga"),
    ("erm", "iid_acc"): ("erm", "iid_acc"),
    ("debiased", "wga"): ("debiased", "wga"),
    ("debiased", "iid_acc"): ("debiased", "iid_acc"),
    ("weights", "mi_original_joint"): ("weights", "mi_original_joint"),
    ("weights", "mi_multiplier_joint"): ("weights", "mi_multiplier_joint"),
    ("weights", "max_min_weight_ratio"): ("weights", "max_min_weight_ratio"),
    ("supervised", "wga"): ("supervised", "debiased", "wga"),
    ("erm", "gap_a"): ("erm", "gaps", "gap_a"),
    ("erm", "gap_b"): ("erm", "gaps", "gap_b"),
    ("erm", "gap_both"): ("erm", "gaps", "gap_both"),
    ("debiased", "gap_a"): ("debiased", "gaps", "gap_a"),
    ("debiased", "gap_b"): ("debiased", "gaps", "gap_b"),
    ("debiased", "gap_both"): ("debiased", "gaps", "gap_both"),
}


def smallest_mode_metric(rec, metric):
    stages = _get(rec, ("mst", "stages")) or []
    if not stages or "smallest_mode_quality" not in stages[-1]:
        return None
    return stages[-1]["smallest_mode_quality"][metric]


def aggregate(records: list) -> dict:
    agg = {}
    for (group, name), path in AGGREGATE_FIELDS.items():
        vals = [_get(r, path) for r in records]
        if any(v is not None for v in vals):
            agg.setdefault(group, {})[name] = _mean_std(vals)
    for metric in ("precision", "recall", "f1"):
        vals = [smallest_mode_metric(r, metric) for r in records]
        if any(v is not None for v in vals):
            agg.setdefault("mst", {})[f"smallest_{metric}"] = _mean_std(vals)
    return agg


def build_report(cfg: ExperimentConfig, records: list, errors: list) -> dict:
    records = sorted(records, key=lambda r: r["seed"])
    return {
        "schema": SCHEMA_VERSION,
        "config_digest": cfg.digest(),
        "config": cfg.canonical(),
        "seeds": list(cfg.seeds),
        "records": records,
        "aggregate": aggregate(records),
        "errors": sorted(errors, key=lambda e: e["seed"]),
    }


def _seed_path(out_dir, seed):
    return os.path.join(out_dir, "seeds", f"seed_{seed}.json")


def _save_artifacts(out_dir, seed, result: fgccdb.PipelineResult) -> None:
    d = os.path.join(out_dir, "artifacts", f"seed_{seed}")
    os.makedirs(d, exist_ok=True)
    nn.save_model(result.erm_model, os.path.join(d, "erm.model"))
    for st in result.mst_result.stages:
        nn.save_model(st.model, os.path.join(d, f"mst_stage_{st.stage}.model"))
    nn.save_model(result.debiased.model, os.path.join(d, "debiased.model"))
    write_atomic(os.path.join(d, "bias_labels.csv"), _bias_csv(result))


def _bias_csv(result: fgccdb.PipelineResult) -> str:
    bias = result.mst_result.bias_labels.tolist()
    w = result.weights.sample_weights.tolist()
    lines = ["sample_id,bias_label,weight"]
    lines += [f"{k},{s},{wk!r}" for k, (s, wk) in enumerate(zip(bias, w))]
    return "\n".join(lines) + "\n"


def run_seed(cfg: ExperimentConfig, seed: int, out_dir: str, save_artifacts: bool = True) -> dict:
    """Run one seed, persist its record atomically and return it."""
    result = fgccdb.run_pipeline(cfg.pipeline, seed)
    record = result.record
    if save_artifacts:
        _save_artifacts(out_dir, seed, result)
    payload = {"pipeline_digest": cfg.pipeline_digest(), "record": record}
    write_atomic(_seed_path(out_dir, seed), dumps(payload))
    return record


def _run_seed_job(args):
    cfg, seed, out_dir, save = args
    try:
        run_seed(cfg, seed, out_dir, save)
        return seed, None
    except Exception as exc:  # reported per seed, never fatal for the others
        logger.error("seed %d failed: %s", seed, exc)
        return seed, {"seed": seed, "error": f"{type(exc).__name__}: {exc}",
                      "traceback": traceback.format_exc(limit=3)}


def load_seed_record(cfg: ExperimentConfig, out_dir: str, seed: int):
    path = _seed_path(out_dir, seed)
    if not os.path.exists(path):
        return None
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("pipeline_digest") != cfg.pipeline_digest():
        return None
    return payload["record"]


def run_experiment(cfg: ExperimentConfig, out_dir: str, jobs: int = 1, save_artifacts: bool = True):
    """Run every missing seed and write ``report.json``. Returns the report
    and the list of per-seed errors."""
    os.makedirs(os.path.join(out_dir, "seeds"), exist_ok=True)
    todo = [s for s in cfg.seeds if load_seed_record(cfg, out_dir, s) is None]
    args = [(cfg, s, out_dir, save_artifacts) for s in todo]
    if jobs > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_run_seed_job, args))
    else:
        results = [_run_seed_job(a) for a in args]
    errors = [err for _, err in results if err is not None]
    # always rebuild from disk so fresh and resumed runs serialize identically
    records = [r for r in (load_seed_record(cfg, out_dir, s) for s in cfg.seeds) if r is not None]
    rep = build_report(cfg, records, errors)
    write_atomic(os.path.join(out_dir, "report.json"), dumps(rep))
    return rep, errors

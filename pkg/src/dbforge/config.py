"""Experiment configuration: a sectioned key/value file (INI syntax) whose
keys carry their units, e.g. ``[mst] gamma_fraction = 0.1``."""
from __future__ import annotations

import configparser
import hashlib
import json
import os
from dataclasses import dataclass, field, replace

from . import datagen, fgccdb, mst, nn
from .errors import ConfigInvalid

OUTPUT_DIR_ENV = "DBFORGE_OUTPUT_DIR"


def _parse_bool(v):
    s = v.strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _int_list(v):
    return tuple(int(t) for t in v.replace(" ", "").split(",") if t)


def _float_list(v):
    return tuple(float(t) for t in v.replace(" ", "").split(",") if t)


# key -> (parser, attribute)
_TRAIN_KEYS = {
    "batch_size": (int, "batch_size"),
    "learning_rate": (float, "learning_rate"),
    "optimizer": (str, "optimizer"),
    "weight_decay": (float, "weight_decay"),
}
_SCHEMA = {
    "experiment": {
        "seeds": _int_list,
        "output_dir": str,
    },
    "dataset": {
        "path": str,
        "classes": int,
        "n_per_class": int,
        "val_per_class": int,
        "test_per_class": int,
        "rho_fraction": _float_list,
        "d_core_dims": int,
        "d_spur_dims": int,
        "core_sep_units": float,
        "spur_sep_units": float,
        "noise_std_units": float,
        "seed": int,
        "test_unbiased": _parse_bool,
    },
    "model": {"hidden_widths": _int_list},
    "erm": {"epochs": int, **{k: p for k, (p, _) in _TRAIN_KEYS.items()}},
    "mst": {
        "gamma_fraction": float,
        "beta_fraction": float,
        "repeats_count": int,
        "confidence": str,
        "epochs": int,
        **{k: p for k, (p, _) in _TRAIN_KEYS.items()},
    },
    "debias": {
        "iterations": int,
        "checkpoint_every_iterations": int,
        "include_supervised": _parse_bool,
        **{k: p for k, (p, _) in _TRAIN_KEYS.items()},
    },
}


@dataclass
class ExperimentConfig:
    pipeline: fgccdb.PipelineConfig = field(default_factory=fgccdb.PipelineConfig)
    seeds: tuple = (1, 2, 3, 4, 5)
    output_dir: str = "dbforge-out"

    def canonical(self) -> dict:
        """Typed, defaults-applied view used for digests and reports."""
        p = self.pipeline
        if isinstance(p.dataset, datagen.GeneratorConfig):
            g = p.dataset
            ds = {
                "classes": g.C, "n_per_class": g.n_per_class, "val_per_class": g.val_per_class,
                "test_per_class": g.test_per_class, "rho_fraction": list(g.rho),
                "d_core_dims": g.d_core, "d_spur_dims": g.d_spur, "core_sep_units": g.core_sep,
                "spur_sep_units": g.spur_sep, "noise_std_units": g.noise_std, "seed": g.seed,
                "test_unbiased": g.test_unbiased,
            }
        else:
            ds = {"path": str(p.dataset)}

        def tc(t: nn.TrainConfig):
            return {"batch_size": t.batch_size, "learning_rate": t.learning_rate,
                    "optimizer": t.optimizer, "weight_decay": t.weight_decay}

        return {
            "dataset": ds,
            "model": {"hidden_widths": list(p.hidden)},
            "erm": {"epochs": p.erm.epochs, **tc(p.erm)},
            "mst": {"gamma_fraction": p.mst.gamma, "beta_fraction": p.mst.beta,
                    "repeats_count": p.mst.repeats, "confidence": p.mst.confidence,
                    "epochs": p.mst.stage_train.epochs, **tc(p.mst.stage_train)},
            "debias": {"iterations": p.debias.train.iterations,
                       "checkpoint_every_iterations": p.debias.checkpoint_every,
                       "include_supervised": p.include_supervised, **tc(p.debias.train)},
            "experiment": {"seeds": list(self.seeds)},
        }

    def digest(self) -> str:
        return _digest(self.canonical())

    def pipeline_digest(self) -> str:
        c = self.canonical()
        del c["experiment"]
        return _digest(c)


def _digest(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _read(source) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        if isinstance(source, str) and "\n" in source:
            cp.read_string(source)
        else:
            with open(source, encoding="utf-8") as fh:
                cp.read_file(fh)
    except configparser.Error as exc:
        raise ConfigInvalid(f"unparseable config: {exc}") from None
    return cp


def parse_config(source) -> ExperimentConfig:
    """Parse a config file path (or config text) into an ExperimentConfig.

    Raises ConfigInvalid naming the offending ``section.key``. OSError from
    reading a path propagates unchanged.
    """
    cp = _read(source)
    values = {}
    for section in cp.sections():
        if section not in _SCHEMA:
            raise ConfigInvalid("unknown section", section)
        for key, raw in cp.items(section):
            name = f"{section}.{key}"
            if key not in _SCHEMA[section]:
                raise ConfigInvalid("unknown key", name)
            try:
                values[name] = _SCHEMA[section][key](raw)
            except ValueError as exc:
                raise ConfigInvalid(f"bad value {raw!r} ({exc})", name) from None
    return build_config(values)


def _train(values, section, base: nn.TrainConfig) -> nn.TrainConfig:
    kw = {attr: values[f"{section}.{k}"] for k, (_, attr) in _TRAIN_KEYS.items() if f"{section}.{k}" in values}
    t = replace(base, **kw)
    if f"{section}.epochs" in values:
        t = replace(t, epochs=values[f"{section}.epochs"], iterations=None)
    if f"{section}.iterations" in values:
        t = replace(t, iterations=values[f"{section}.iterations"], epochs=None)
    try:
        t.validate()
    except ValueError as exc:
        raise ConfigInvalid(str(exc), section) from None
    return t


def build_config(values: dict) -> ExperimentConfig:
    v = values
    defaults = fgccdb.PipelineConfig()
    if "dataset.path" in v:
        dataset = v["dataset.path"]
    else:
        g = datagen.GeneratorConfig()
        mapping = {
            "classes": "C", "n_per_class": "n_per_class", "val_per_class": "val_per_class",
            "test_per_class": "test_per_class", "rho_fraction": "rho", "d_core_dims": "d_core",
            "d_spur_dims": "d_spur", "core_sep_units": "core_sep", "spur_sep_units": "spur_sep",
            "noise_std_units": "noise_std", "seed": "seed", "test_unbiased": "test_unbiased",
        }
        g = replace(g, **{attr: v[f"dataset.{k}"] for k, attr in mapping.items() if f"dataset.{k}" in v})
        try:
            g.validate()
        except ConfigInvalid as exc:
            inverse = {attr: k for k, attr in mapping.items()}
            key = f"dataset.{inverse.get(exc.key, exc.key)}"
            raise ConfigInvalid(str(exc).split(": ", 1)[-1], key) from None
        dataset = g

    mcfg = replace(
        defaults.mst,
        gamma=v.get("mst.gamma_fraction", defaults.mst.gamma),
        beta=v.get("mst.beta_fraction", defaults.mst.beta),
        repeats=v.get("mst.repeats_count", defaults.mst.repeats),
        confidence=v.get("mst.confidence", defaults.mst.confidence),
        stage_train=_train(v, "mst", defaults.mst.stage_train),
    )
    for key, ok in (
        ("mst.gamma_fraction", 0 < mcfg.gamma <= 1),
        ("mst.beta_fraction", 0 < mcfg.beta <= 1),
        ("mst.repeats_count", mcfg.repeats >= 0),
        ("mst.confidence", mcfg.confidence in ("own_label", "max_prob")),
    ):
        if not ok:
            raise ConfigInvalid("value out of range", key)

    dcfg = fgccdb.DebiasConfig(
        train=_train(v, "debias", defaults.debias.train),
        checkpoint_every=v.get("debias.checkpoint_every_iterations", defaults.debias.checkpoint_every),
    )
    if dcfg.train.iterations is None:
        raise ConfigInvalid("debiased training is iteration based", "debias.iterations")
    if dcfg.checkpoint_every < 1:
        raise ConfigInvalid("must be >= 1", "debias.checkpoint_every_iterations")

    hidden = v.get("model.hidden_widths", defaults.hidden)
    if len(hidden) > 2 or any(h < 1 for h in hidden):
        raise ConfigInvalid("zero to two positive widths", "model.hidden_widths")

    seeds = v.get("experiment.seeds", ExperimentConfig.seeds)
    if not seeds:
        raise ConfigInvalid("at least one seed required", "experiment.seeds")
    pipeline = fgccdb.PipelineConfig(
        dataset=dataset,
        hidden=tuple(hidden),
        erm=_train(v, "erm", defaults.erm),
        mst=mcfg,
        debias=dcfg,
        include_supervised=v.get("debias.include_supervised", False),
    )
    return ExperimentConfig(
        pipeline=pipeline,
        seeds=tuple(seeds),
        output_dir=v.get("experiment.output_dir", ExperimentConfig.output_dir),
    )


def resolve_output_dir(cfg: ExperimentConfig, flag: str | None = None) -> str:
    if flag:
        return flag
    return os.environ.get(OUTPUT_DIR_ENV) or cfg.output_dir


STANDARD_BENCHMARK = """\
# single shortcut, two classes, 95% aligned
[experiment]
seeds = 1, 2, 3, 4, 5
output_dir = dbforge-out

[dataset]
classes = 2
n_per_class = 2000
val_per_class = 500
test_per_class = 1000
rho_fraction = 0.95
d_core_dims = 10
d_spur_dims = 10
core_sep_units = 1.5
spur_sep_units = 4.0
noise_std_units = 1.0
seed = 0

[model]
hidden_widths = 32

[erm]
epochs = 20
batch_size = 64
learning_rate = 0.01

[mst]
gamma_fraction = 0.1
beta_fraction = 0.5
repeats_count = 3
epochs = 20
batch_size = 64
learning_rate = 0.01

[debias]
iterations = 2000
checkpoint_every_iterations = 100
batch_size = 64
learning_rate = 0.001
"""

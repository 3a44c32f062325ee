"""Weight derivation from predicted modes, weighted debiased training with
worst-class checkpoint selection, and the end-to-end per-seed pipeline."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import core, datagen, metrics, mst, nn
from .errors import StageError

logger = logging.getLogger(__name__)


@dataclass
class DebiasConfig:
    train: nn.TrainConfig = field(
        default_factory=lambda: nn.TrainConfig(epochs=None, iterations=2000, batch_size=64, learning_rate=1e-3)
    )
    checkpoint_every: int = 100

    def validate(self):
        self.train.validate()
        if self.train.iterations is None:
            raise ValueError("debiased training is iteration based")
        if self.checkpoint_every < 1:
            raise ValueError("checkpoint_every must be >= 1")
        return self


@dataclass
class DerivedWeights:
    confusion: core.ConfusionMatrix
    stats: core.ModeStatistics
    table: core.WeightTable
    sample_weights: np.ndarray

    def diagnostics(self) -> dict:
        st, wt = self.stats, self.table
        positive = self.sample_weights[self.sample_weights > 0]
        residual = core.matching_residual(st, wt)
        out = {
            "confusion": self.confusion.counts.tolist(),
            "W": wt.W.tolist(),
            "w": wt.w.tolist(),
            "q": st.q.tolist(),
            "P": st.P.tolist(),
            "matchable": list(wt.matchable),
            "empty_modes": sorted([list(m) for m in wt.empty_modes]),
            "empty_classes": list(st.empty_classes),
            "mi_original_joint": core.mutual_information(st.J),
            "mi_multiplier_joint": core.mutual_information(core.reweighted_joint(st, wt)),
            "max_min_weight_ratio": float(positive.max() / positive.min()),
            "realized_class_mass": wt.W.sum(axis=0).tolist(),
        }
        if not wt.all_matchable:
            out["residual_mismatch"] = residual.tolist()
        return out


def derive_weights_from_modes(s, y, C: int) -> DerivedWeights:
    M, stats, table, w = core.fg_ccdb_weights(s, y, C)
    if not table.all_matchable:
        bad = [j for j, ok in enumerate(table.matchable) if not ok]
        logger.warning("classes %s cannot be matched exactly: some bias values never occur", bad)
    return DerivedWeights(M, stats, table, w)


def derive_weights(result: mst.MstResult, labels) -> DerivedWeights:
    """Weights from MST's predicted modes ``(bias_label, class_label)``."""
    return derive_weights_from_modes(result.bias_labels, labels, result.confusion.C)


@dataclass
class DebiasResult:
    model: nn.ClassifierModel
    trace: list
    best_index: int


def worst_class_accuracy(model, ds) -> float:
    pred = model.predict_labels(ds.features)
    accs = [np.mean(pred[ds.labels == c] == c) for c in range(ds.C) if (ds.labels == c).any()]
    return float(min(accs))


def train_debiased(ds_train, ds_val, weights, cfg: DebiasConfig, arch: nn.Architecture, seed: int) -> DebiasResult:
    """Train with weighted sampling and keep the checkpoint with the best
    worst-class validation accuracy (earliest wins ties)."""
    cfg.validate()
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (ds_train.N,):
        raise ValueError(f"{weights.size} weights for {ds_train.N} training samples")
    train = ds_train.without_shortcuts()
    val = ds_val.without_shortcuts()
    tcfg = replace(cfg.train, seed=mst.derive_seed(seed, 0xDEB1))
    sampler = nn.WeightedSampler(weights, mst.derive_seed(seed, 0x5A4))
    model = nn.init_model(arch, tcfg.seed)
    trace = []
    best = {"acc": -1.0, "params": None, "index": -1}

    def hook(step, m):
        acc = worst_class_accuracy(m, val)
        trace.append({"iteration": step, "worst_class_val_acc": acc})
        if acc > best["acc"]:
            best.update(acc=acc, params=[p.copy() for p in m.params], index=len(trace) - 1)

    nn.fit(model, train.features, train.labels, tcfg, sampler, every=cfg.checkpoint_every, hook=hook)
    if not trace or trace[-1]["iteration"] != tcfg.iterations:
        hook(tcfg.iterations, model)
    chosen = nn.ClassifierModel(arch, best["params"], model.init)
    chosen.loss_history = list(model.loss_history)
    return DebiasResult(chosen, trace, best["index"])


@dataclass
class PipelineConfig:
    dataset: object = field(default_factory=datagen.GeneratorConfig)
    hidden: tuple = (32,)
    erm: nn.TrainConfig = field(default_factory=lambda: nn.TrainConfig(epochs=20))
    mst: mst.MstConfig = field(default_factory=mst.MstConfig)
    debias: DebiasConfig = field(default_factory=DebiasConfig)
    include_supervised: bool = False


@dataclass
class PipelineResult:
    record: dict
    erm_model: nn.ClassifierModel
    mst_result: mst.MstResult
    weights: DerivedWeights
    debiased: DebiasResult
    supervised: DebiasResult | None = None


def load_splits(dataset) -> dict:
    if isinstance(dataset, datagen.GeneratorConfig):
        return datagen.generate(dataset)
    if isinstance(dataset, dict):
        return dataset
    import os

    return {s: datagen.load_dataset(os.path.join(str(dataset), f"{s}.txt")) for s in datagen.SPLITS}


def _evaluate(model, test, train_freqs):
    pred = model.predict_labels(test.features)
    g = metrics.grouped_accuracy(pred, test, train_freqs)
    out = g.to_dict()
    if test.S == 2:
        out["gaps"] = metrics.shortcut_gaps(g)
    return out


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


def run_pipeline(cfg: PipelineConfig, seed: int, splits: dict | None = None) -> PipelineResult:
    """ERM baseline, MST bias labels, mode weights, debiased training and
    evaluation for one seed. Ground-truth shortcuts are read only by metrics
    and by the optional supervised variant."""
    if splits is None:
        splits = _stage("data", load_splits, cfg.dataset)
    train, val, test = splits["train"], splits["val"], splits["test"]
    arch = nn.Architecture(train.d, tuple(cfg.hidden), train.C)
    train_freqs = metrics.group_frequencies(train) if train.S else None

    erm_cfg = replace(cfg.erm, seed=mst.derive_seed(seed, 0xE4))
    erm_model = _stage("erm", nn.train_erm, train.without_shortcuts(), arch, erm_cfg)

    mst_cfg = replace(cfg.mst, seed=mst.derive_seed(seed, 0x357))
    truth = train.shortcuts[:, 0] if train.S else None
    mres = _stage("mst", mst.run_mst, train, arch, mst_cfg, truth)

    dw = _stage("weights", derive_weights, mres, train.labels)
    deb = _stage("debias", train_debiased, train, val, dw.sample_weights, cfg.debias, arch, seed)

    record = {
        "seed": seed,
        "erm": _evaluate(erm_model, test, train_freqs) if test.S else {},
        "mst": {
            "stages": [s.to_dict() for s in mres.stages],
            "final_confusion": mres.confusion.counts.tolist(),
        },
        "weights": dw.diagnostics(),
        "debiased": _evaluate(deb.model, test, train_freqs) if test.S else {},
        "selection": {"best_index": deb.best_index, "trace": deb.trace},
    }
    sup = None
    if cfg.include_supervised and train.S:
        sw = _stage("weights-supervised", derive_weights_from_modes, train.shortcuts[:, 0], train.labels, train.C)
        sup = _stage("debias-supervised", train_debiased, train, val, sw.sample_weights, cfg.debias, arch, seed)
        record["supervised"] = {
            "weights": sw.diagnostics(),
            "debiased": _evaluate(sup.model, test, train_freqs),
        }
    return PipelineResult(record, erm_model, mres, dw, deb, sup)

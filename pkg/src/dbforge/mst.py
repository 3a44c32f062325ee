"""Multi-stage data-selective retraining for annotation-free bias labels.

A model trained on a small random subset picks up the shortcut; each
enhancement stage keeps the most confidently classified fraction of every
class (mostly shortcut-aligned samples) and trains a fresh model on it, which
leans on the shortcut even harder. The last model's argmax is the bias label.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import core, metrics, nn
from .errors import StageError

logger = logging.getLogger(__name__)


@dataclass
class MstConfig:
    gamma: float = 0.10
    beta: float = 0.50
    repeats: int = 3
    stage_train: nn.TrainConfig = field(default_factory=nn.TrainConfig)
    seed: int = 0
    confidence: str = "own_label"

    def validate(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma {self.gamma} outside (0, 1]")
        if not 0.0 < self.beta <= 1.0:
            raise ValueError(f"beta {self.beta} outside (0, 1]")
        if self.repeats < 0:
            raise ValueError("repeats must be >= 0")
        if self.confidence not in ("own_label", "max_prob"):
            raise ValueError(f"unknown confidence mode {self.confidence!r}")
        self.stage_train.validate()
        return self


@dataclass
class StageRecord:
    stage: int
    indices: np.ndarray
    model: nn.ClassifierModel
    bias_pred: np.ndarray
    confusion_vs_truth: np.ndarray | None = None
    conflicting_fraction: float | None = None
    quality: metrics.ModeQuality | None = None

    def to_dict(self):
        out = {"stage": self.stage, "train_size": int(self.indices.size)}
        if self.conflicting_fraction is not None:
            out["conflicting_fraction"] = self.conflicting_fraction
        if self.confusion_vs_truth is not None:
            out["confusion_vs_truth"] = self.confusion_vs_truth.tolist()
        if self.quality is not None:
            out["smallest_mode"] = list(self.quality.smallest_mode)
            out["smallest_mode_quality"] = self.quality.smallest
            out["mode_accuracy"] = self.quality.overall_accuracy
        return out


@dataclass
class MstResult:
    bias_labels: np.ndarray
    stages: list
    confusion: core.ConfusionMatrix

    @property
    def final_quality(self):
        return self.stages[-1].quality


def derive_seed(seed: int, *keys: int) -> int:
    ss = np.random.SeedSequence([int(seed) & (2**63 - 1), *keys])
    return int(ss.generate_state(1, np.uint64)[0] >> 1)


def split_initial(ds, gamma: float, seed: int) -> np.ndarray:
    """Uniform random subset of size ceil(gamma * N), sorted, not stratified."""
    N = ds.N
    k = min(N, math.ceil(gamma * N - 1e-9))
    k = max(k, 1)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed) & (2**63 - 1), 0xD1]))
    idx = np.sort(rng.choice(N, size=k, replace=False))
    missing = sorted(set(range(ds.C)) - set(np.unique(ds.labels[idx]).tolist()))
    if missing:
        logger.warning("initial subset of %d samples misses classes %s", k, missing)
    return idx


def confidence_scores(proba, labels, mode: str = "own_label") -> np.ndarray:
    proba = np.asarray(proba)
    if mode == "own_label":
        return proba[np.arange(len(labels)), np.asarray(labels)]
    if mode == "max_prob":
        return proba.max(axis=1)
    raise ValueError(f"unknown confidence mode {mode!r}")


def select_top_confidence(labels, proba, beta: float, C: int | None = None,
                          mode: str = "own_label") -> np.ndarray:
    """Per class, the ceil(beta * N_c) most confident samples (ties go to the
    lower index). Returns sorted indices."""
    labels = np.asarray(labels)
    if len(proba) != len(labels):
        raise ValueError("probability rows do not align with labels")
    C = C if C is not None else np.asarray(proba).shape[1]
    conf = confidence_scores(proba, labels, mode)
    keep = []
    for c in range(C):
        members = np.flatnonzero(labels == c)
        if members.size == 0:
            logger.warning("class %d is empty; skipped in confidence selection", c)
            continue
        k = math.ceil(beta * members.size - 1e-9)
        # lexsort: last key is primary; descending confidence then ascending index
        order = np.lexsort((members, -conf[members]))
        keep.append(members[order[:k]])
    return np.sort(np.concatenate(keep)) if keep else np.zeros(0, np.int64)


def _stage_diagnostics(rec: StageRecord, labels, truth, C):
    if truth is None:
        return
    truth = np.asarray(truth)
    rec.confusion_vs_truth = core.build_confusion(rec.bias_pred, truth, C).counts
    rec.conflicting_fraction = float(np.mean(truth[rec.indices] != labels[rec.indices]))
    rec.quality = metrics.mode_quality(
        np.column_stack([rec.bias_pred, labels]), np.column_stack([truth, labels])
    )


def run_mst(ds, arch: nn.Architecture, cfg: MstConfig, truth=None) -> MstResult:
    """Run the stages and return bias labels for every sample of ``ds``.

    ``truth`` (ground-truth shortcut labels, one per sample) is used only to
    fill per-stage diagnostics. Shortcut columns of ``ds`` are dropped before
    any training or selection happens.
    """
    cfg.validate()
    data = ds.without_shortcuts()
    labels = data.labels
    stages = []

    def train(stage, idx):
        tcfg = replace(cfg.stage_train, seed=derive_seed(cfg.seed, 0x57A6E, stage))
        try:
            model = nn.train_erm(data.subset(idx), arch, tcfg)
        except Exception as exc:
            raise StageError(f"mst-stage-{stage}", exc) from exc
        proba = model.predict_proba(data.features)
        rec = StageRecord(stage, idx, model, np.argmax(proba, axis=1))
        _stage_diagnostics(rec, labels, truth, data.C)
        stages.append(rec)
        return proba

    proba = train(0, split_initial(data, cfg.gamma, derive_seed(cfg.seed, 0x5B1)))
    for r in range(1, cfg.repeats + 1):
        idx = select_top_confidence(labels, proba, cfg.beta, data.C, cfg.confidence)
        proba = train(r, idx)

    bias = stages[-1].bias_pred
    return MstResult(bias_labels=bias, stages=stages, confusion=core.build_confusion(bias, labels, data.C))

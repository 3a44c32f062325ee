"""Group accuracies, shortcut gap metrics, mode-prediction quality and
feature/label correlation profiles."""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import MissingCell, NoShortcuts


@dataclass
class GroupedAccuracy:
    """Accuracy per (class, shortcut values...) group.

    ``per_group`` maps a tuple key ``(y, s_1, ..., s_S)`` to ``(count, accuracy)``;
    only nonempty groups are present.
    """
    per_group: dict
    iid_acc: float
    wga: float
    per_class_worst: float
    per_class: dict
    weighting: str

    def to_dict(self):
        return {
            "wga": self.wga,
            "iid_acc": self.iid_acc,
            "per_class_worst": self.per_class_worst,
            "weighting": self.weighting,
            "per_class": {str(k): v for k, v in sorted(self.per_class.items())},
            "per_group": {
                "-".join(map(str, k)): {"count": c, "accuracy": a}
                for k, (c, a) in sorted(self.per_group.items())
            },
        }


def group_keys(labels, shortcuts) -> np.ndarray:
    return np.column_stack([np.asarray(labels), np.asarray(shortcuts)])


def grouped_accuracy(pred, ds, train_group_freqs: dict | None = None) -> GroupedAccuracy:
    """``train_group_freqs`` maps group keys to training frequencies; when
    given, the in-distribution accuracy weights each group's accuracy by it
    (renormalized over groups present in ``ds``)."""
    if ds.S < 1:
        raise NoShortcuts("grouped accuracy needs at least one shortcut column")
    pred = np.asarray(pred)
    correct = pred == ds.labels
    keys = group_keys(ds.labels, ds.shortcuts)
    per_group = {}
    for combo in itertools.product(range(ds.C), repeat=1 + ds.S):
        mask = np.all(keys == np.array(combo), axis=1)
        n = int(mask.sum())
        if n:
            per_group[combo] = (n, float(correct[mask].mean()))
    if train_group_freqs is not None:
        wts = {k: float(train_group_freqs.get(k, 0.0)) for k in per_group}
        weighting = "train_frequency"
    else:
        wts = {k: float(n) for k, (n, _) in per_group.items()}
        weighting = "test_frequency"
    total = sum(wts.values())
    if total > 0:
        iid = sum(wts[k] * a for k, (_, a) in per_group.items()) / total
    else:
        iid = float(correct.mean())
    per_class = {}
    for c in range(ds.C):
        m = ds.labels == c
        if m.any():
            per_class[c] = float(correct[m].mean())
    return GroupedAccuracy(
        per_group=per_group,
        iid_acc=float(iid),
        wga=min(a for _, a in per_group.values()),
        per_class_worst=min(per_class.values()),
        per_class=per_class,
        weighting=weighting,
    )


def group_frequencies(ds) -> dict:
    keys = group_keys(ds.labels, ds.shortcuts)
    combos, counts = np.unique(keys, axis=0, return_counts=True)
    return {tuple(int(v) for v in k): c / ds.N for k, c in zip(combos, counts)}


def shortcut_gaps(grouped: GroupedAccuracy) -> dict:
    """Accuracy drops relative to in-distribution accuracy for groups where
    shortcut A, shortcut B, or both take an uncommon value (one that differs
    from the class)."""
    pools = {"a": [], "b": [], "both": []}
    for key, (n, acc) in grouped.per_group.items():
        if len(key) != 3:
            raise MissingCell("shortcut gaps need exactly two shortcut columns")
        y, a, b = key
        if a != y and b == y:
            pools["a"].append((n, acc))
        elif a == y and b != y:
            pools["b"].append((n, acc))
        elif a != y and b != y:
            pools["both"].append((n, acc))
    out = {"id_acc": grouped.iid_acc}
    for name, pool in pools.items():
        if not pool:
            raise MissingCell(f"no samples with uncommon shortcut combination '{name}'")
        n = sum(c for c, _ in pool)
        acc = sum(c * a for c, a in pool) / n
        out[f"gap_{name}"] = acc - grouped.iid_acc
    return out


@dataclass
class ModeQuality:
    per_mode: dict
    smallest_mode: tuple
    smallest: dict
    overall_accuracy: float

    def to_dict(self):
        return {
            "smallest_mode": list(self.smallest_mode),
            "smallest": self.smallest,
            "overall_accuracy": self.overall_accuracy,
            "per_mode": {f"{i}-{j}": v for (i, j), v in sorted(self.per_mode.items())},
        }


def _prf(tp, fp, fn):
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return {"precision": precision, "recall": recall, "f1": f1}


def mode_quality(pred_modes, truth_modes) -> ModeQuality:
    """One-vs-rest precision/recall/F1 for every mode ``(bias, class)``.

    ``pred_modes`` and ``truth_modes`` are sequences of pairs (or N x 2
    arrays). The smallest mode is the one with the fewest ground-truth samples
    among those present in the truth, ties broken lexicographically.
    """
    pred = np.asarray(pred_modes, dtype=np.int64).reshape(-1, 2)
    truth = np.asarray(truth_modes, dtype=np.int64).reshape(-1, 2)
    if pred.shape != truth.shape:
        raise ValueError("prediction and truth lengths differ")
    modes = sorted({tuple(m) for m in truth.tolist()} | {tuple(m) for m in pred.tolist()})
    per_mode = {}
    counts = {}
    for m in modes:
        p = np.all(pred == m, axis=1)
        t = np.all(truth == m, axis=1)
        tp = int((p & t).sum())
        per_mode[m] = _prf(tp, int((p & ~t).sum()), int((~p & t).sum()))
        per_mode[m]["support"] = int(t.sum())
        counts[m] = int(t.sum())
    present = [m for m in modes if counts[m] > 0]
    smallest = min(present, key=lambda m: (counts[m], m)) if present else (0, 0)
    overall = float(np.all(pred == truth, axis=1).mean()) if len(pred) else 0.0
    return ModeQuality(per_mode, smallest, dict(per_mode.get(smallest, _prf(0, 0, 0))), overall)


def _max_abs_corr(X, labels):
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels)
    Xc = X - X.mean(axis=0)
    xs = np.sqrt((Xc * Xc).sum(axis=0))
    best = np.zeros(X.shape[1])
    for v in np.unique(labels):
        ind = (labels == v).astype(np.float64)
        ic = ind - ind.mean()
        isd = np.sqrt(ic @ ic)
        if isd == 0:
            continue
        with np.errstate(invalid="ignore", divide="ignore"):
            r = (ic @ Xc) / (xs * isd)
        r = np.where(xs > 0, np.abs(r), 0.0)
        best = np.maximum(best, r)
    return best


def correlation_profile(features, labels, bias_labels) -> dict:
    """Per feature dimension, the largest |Pearson r| against any one-hot
    class indicator and against any one-hot bias indicator. Constant
    dimensions get 0."""
    features = np.asarray(features)
    if features.shape[0] < 3:
        raise ValueError("need at least 3 samples")
    return {
        "class_corr": _max_abs_corr(features, labels),
        "bias_corr": _max_abs_corr(features, bias_labels),
    }


def empirical_joint_from_sampler(draws, s, y, C: int) -> np.ndarray:
    draws = np.asarray(draws, dtype=np.int64)
    if draws.size == 0:
        raise ValueError("need at least one draw")
    s = np.asarray(s, dtype=np.int64)[draws]
    y = np.asarray(y, dtype=np.int64)[draws]
    counts = np.bincount(s * C + y, minlength=C * C).reshape(C, C)
    return counts / draws.size


def accuracy(pred, labels) -> float:
    return float(np.mean(np.asarray(pred) == np.asarray(labels)))

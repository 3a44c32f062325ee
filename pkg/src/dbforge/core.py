"""Discrete mode algebra: confusion counts over (bias, class) cells, the
joint/conditional/marginal estimates derived from them, closed-form mode
weights, and mutual information.

Rows are always indexed by bias label ``s`` and columns by class label ``y``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateWeights, EmptyInput, LabelOutOfRange, NotADistribution


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1] or counts.shape[0] < 2:
            raise ValueError(f"confusion matrix must be CxC with C >= 2, got {counts.shape}")
        if (counts < 0).any():
            raise ValueError("confusion counts must be nonnegative")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    @property
    def C(self) -> int:
        return self.counts.shape[0]

    @property
    def N(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class ModeStatistics:
    J: np.ndarray
    P: np.ndarray
    q: np.ndarray
    class_prior: np.ndarray
    empty_classes: tuple = ()


@dataclass(frozen=True)
class WeightTable:
    W: np.ndarray
    w: np.ndarray
    empty_modes: frozenset = field(default_factory=frozenset)
    matchable: tuple = ()

    @property
    def all_matchable(self) -> bool:
        return all(self.matchable)


def build_confusion(s, y, C: int) -> ConfusionMatrix:
    s = np.asarray(s)
    y = np.asarray(y)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError(f"bias and class labels must be 1-D and equal length, got {s.shape} and {y.shape}")
    if s.size == 0:
        raise EmptyInput("no samples to count")
    for name, lab in (("bias", s), ("class", y)):
        if not np.issubdtype(lab.dtype, np.integer):
            raise LabelOutOfRange(f"{name} labels must be integers")
        bad = np.flatnonzero((lab < 0) | (lab >= C))
        if bad.size:
            k = int(bad[0])
            raise LabelOutOfRange(f"{name} label {int(lab[k])} at index {k} outside [0, {C})")
    flat = np.bincount(s.astype(np.int64) * C + y.astype(np.int64), minlength=C * C)
    return ConfusionMatrix(flat.reshape(C, C))


def estimate_statistics(M: ConfusionMatrix) -> ModeStatistics:
    N = M.N
    if N < 1:
        raise EmptyInput("confusion matrix has no samples")
    J = M.counts / N
    colsum = J.sum(axis=0)
    nonempty = M.counts.sum(axis=0) > 0
    P = np.zeros_like(J)
    P[:, nonempty] = J[:, nonempty] / colsum[nonempty]
    q = J.sum(axis=1)
    empty = tuple(int(j) for j in np.flatnonzero(~nonempty))
    return ModeStatistics(J=J, P=P, q=q, class_prior=colsum, empty_classes=empty)


def compute_weights(stats: ModeStatistics, M: ConfusionMatrix) -> WeightTable:
    """Mode multipliers ``W = q / P`` and per-sample weights ``w = W / M``.

    Empty modes get zero weight. A class column is flagged unmatchable when
    ``q`` puts mass on a bias value the class never shows; empty classes are
    excluded from matching and reported as matchable.
    """
    counts = M.counts
    occupied = counts > 0
    W = np.zeros_like(stats.P)
    rows, cols = np.nonzero(occupied)
    W[rows, cols] = stats.q[rows] / stats.P[rows, cols]
    w = np.zeros_like(W)
    w[rows, cols] = W[rows, cols] / counts[rows, cols]
    empty_classes = set(stats.empty_classes)
    matchable = tuple(
        j in empty_classes or not bool(((stats.P[:, j] == 0) & (stats.q > 0)).any())
        for j in range(M.C)
    )
    empty_modes = frozenset(zip(*(a.tolist() for a in np.nonzero(~occupied))))
    return WeightTable(W=W, w=w, empty_modes=empty_modes, matchable=matchable)


def matching_residual(stats: ModeStatistics, wt: WeightTable) -> np.ndarray:
    """Per-class ``max_i |W[i,j] P[i,j] - q[i]|``; zero for empty classes."""
    res = np.abs(wt.W * stats.P - stats.q[:, None]).max(axis=0)
    res[list(stats.empty_classes)] = 0.0
    return res


def reweighted_joint(stats: ModeStatistics, wt: WeightTable) -> np.ndarray:
    if stats.J.shape != wt.W.shape:
        raise ValueError(f"shape mismatch {stats.J.shape} vs {wt.W.shape}")
    m = wt.W * stats.J
    total = m.sum()
    if not total > 0:
        raise DegenerateWeights("reweighted joint has zero total mass")
    return m / total


def mutual_information(joint) -> float:
    """Mutual information (nats) between the row and column variables of a
    nonnegative matrix, renormalized to a distribution first."""
    J = np.asarray(joint, dtype=np.float64)
    if J.ndim != 2:
        raise NotADistribution("joint must be a 2-D matrix")
    if (J < 0).any() or not np.isfinite(J).all():
        raise NotADistribution("joint has negative or non-finite entries")
    total = J.sum()
    if not total > 0:
        raise NotADistribution("joint has zero total mass")
    J = J / total
    r = J.sum(axis=1)
    c = J.sum(axis=0)
    nz = J > 0
    outer = np.outer(r, c)
    mi = float(np.sum(J[nz] * np.log(J[nz] / outer[nz])))
    # I >= 0 analytically; only roundoff goes below
    return max(mi, 0.0)


def per_sample_weights(wt: WeightTable, s, y) -> np.ndarray:
    s = np.asarray(s, dtype=np.int64)
    y = np.asarray(y, dtype=np.int64)
    C = wt.w.shape[0]
    if s.shape != y.shape:
        raise ValueError("bias and class label arrays differ in length")
    if ((s < 0) | (s >= C) | (y < 0) | (y >= C)).any():
        raise LabelOutOfRange(f"mode outside the {C}x{C} weight table")
    return wt.w[s, y]


def fg_ccdb_weights(s, y, C: int):
    """Convenience composition: counts, statistics, weight table, per-sample weights."""
    M = build_confusion(s, y, C)
    stats = estimate_statistics(M)
    wt = compute_weights(stats, M)
    return M, stats, wt, per_sample_weights(wt, s, y)

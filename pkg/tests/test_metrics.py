import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dbforge import core, metrics, nn
from dbforge.datagen import LabeledDataset
from dbforge.errors import MissingCell, NoShortcuts


def grouped_ds(cells):
    """cells: {(y, s): (n, n_correct)} -> dataset and predictions."""
    y, s, pred = [], [], []
    for (c, v), (n, k) in sorted(cells.items()):
        y += [c] * n
        s += [v] * n
        pred += [c] * k + [1 - c] * (n - k)
    ds = LabeledDataset(np.zeros((len(y), 1)), y, np.array(s)[:, None], 2)
    return ds, np.array(pred)


def test_equal_weight_example():
    ds, pred = grouped_ds({(0, 0): (20, 18), (0, 1): (20, 19), (1, 0): (20, 12), (1, 1): (20, 14)})
    g = metrics.grouped_accuracy(pred, ds)
    assert g.wga == pytest.approx(0.6)
    assert g.iid_acc == pytest.approx(0.7875)
    assert g.weighting == "test_frequency"


def test_all_correct():
    ds, pred = grouped_ds({(0, 0): (5, 5), (0, 1): (3, 3), (1, 0): (2, 2), (1, 1): (4, 4)})
    g = metrics.grouped_accuracy(pred, ds)
    assert g.wga == g.iid_acc == g.per_class_worst == 1.0


def test_train_frequency_weighting():
    ds, pred = grouped_ds({(0, 0): (10, 10), (0, 1): (10, 0), (1, 0): (10, 0), (1, 1): (10, 10)})
    freqs = {(0, 0): 0.475, (0, 1): 0.025, (1, 0): 0.025, (1, 1): 0.475}
    g = metrics.grouped_accuracy(pred, ds, freqs)
    assert g.iid_acc == pytest.approx(0.95)
    assert g.wga == 0.0
    assert g.weighting == "train_frequency"


def test_group_frequencies():
    ds, _ = grouped_ds({(0, 0): (3, 0), (1, 1): (1, 0)})
    assert metrics.group_frequencies(ds) == {(0, 0): 0.75, (1, 1): 0.25}


def test_no_shortcuts():
    ds = LabeledDataset(np.zeros((2, 1)), [0, 1], np.zeros((2, 0), np.int64), 2)
    with pytest.raises(NoShortcuts):
        metrics.grouped_accuracy([0, 1], ds)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 2), st.integers(0, 2), st.integers(0, 2)), min_size=1, max_size=60))
def test_ordering_invariant(rows):
    y = np.array([r[0] for r in rows])
    s = np.array([r[1] for r in rows])
    pred = np.array([r[2] for r in rows])
    ds = LabeledDataset(np.zeros((len(y), 1)), y, s[:, None], 3)
    g = metrics.grouped_accuracy(pred, ds)
    assert g.wga <= g.per_class_worst + 1e-12
    assert g.per_class_worst <= g.iid_acc + 1e-12
    assert 0.0 <= g.wga <= 1.0


def two_shortcut_ds(acc):
    """acc: function (y, a, b) -> accuracy out of 10."""
    y, sh, pred = [], [], []
    for c, a, b in itertools.product(range(2), repeat=3):
        k = acc(c, a, b)
        y += [c] * 10
        sh += [(a, b)] * 10
        pred += [c] * k + [1 - c] * (10 - k)
    return LabeledDataset(np.zeros((len(y), 1)), y, np.array(sh), 2), np.array(pred)


def test_uniform_accuracy_gaps_zero():
    ds, pred = two_shortcut_ds(lambda c, a, b: 8)
    gaps = metrics.shortcut_gaps(metrics.grouped_accuracy(pred, ds))
    assert gaps["id_acc"] == pytest.approx(0.8)
    for k in ("gap_a", "gap_b", "gap_both"):
        assert gaps[k] == pytest.approx(0.0, abs=1e-15)


def test_both_uncommon_gap():
    # common groups perfect, both-uncommon 3/10; train weights put all mass on common groups
    ds, pred = two_shortcut_ds(lambda c, a, b: 3 if (a != c and b != c) else (9 if (a == c and b == c) else 6))
    freqs = {(c, c, c): 0.5 for c in range(2)}
    gaps = metrics.shortcut_gaps(metrics.grouped_accuracy(pred, ds, freqs))
    assert gaps["id_acc"] == pytest.approx(0.9)
    assert gaps["gap_both"] == pytest.approx(-0.6)
    assert gaps["gap_a"] == pytest.approx(-0.3)


def test_gaps_missing_cell():
    ds, pred = two_shortcut_ds(lambda c, a, b: 5)
    keep = ~((ds.shortcuts[:, 0] != ds.labels) & (ds.shortcuts[:, 1] != ds.labels))
    sub = ds.subset(np.flatnonzero(keep))
    with pytest.raises(MissingCell):
        metrics.shortcut_gaps(metrics.grouped_accuracy(pred[keep], sub))


def test_mode_quality_identity_and_constant():
    truth = [(0, 0), (1, 0), (1, 1), (0, 1), (0, 0)]
    q = metrics.mode_quality(truth, truth)
    assert all(v["f1"] == 1.0 for v in q.per_mode.values())
    assert q.overall_accuracy == 1.0
    q = metrics.mode_quality([(0, 0)] * 5, truth)
    assert q.per_mode[(0, 0)]["recall"] == 1.0
    assert all(q.per_mode[m]["recall"] == 0.0 for m in [(1, 0), (1, 1), (0, 1)])


def test_mode_quality_smallest_example():
    A, B = (0, 0), (1, 0)
    q = metrics.mode_quality([A, A, B, B], [A, B, B, B])
    assert q.smallest_mode == A
    assert q.smallest["precision"] == 0.5
    assert q.smallest["recall"] == 1.0
    assert q.smallest["f1"] == pytest.approx(2 / 3)


def test_mode_quality_tie_lexicographic():
    q = metrics.mode_quality([(1, 1), (0, 1)], [(1, 1), (0, 1)])
    assert q.smallest_mode == (0, 1)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 2), st.integers(0, 2), st.integers(0, 2), st.integers(0, 2)),
                min_size=1, max_size=200))
def test_mode_quality_against_table_oracle(rows):
    pred = [(r[0], r[1]) for r in rows]
    truth = [(r[2], r[3]) for r in rows]
    q = metrics.mode_quality(pred, truth)
    for m, v in q.per_mode.items():
        tp = fp = fn = 0
        for p, t in zip(pred, truth):
            if p == m and t == m:
                tp += 1
            elif p == m:
                fp += 1
            elif t == m:
                fn += 1
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        assert v["precision"] == prec and v["recall"] == rec
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        assert v["f1"] == pytest.approx(f1, abs=1e-15)


def test_correlation_examples():
    rng = np.random.default_rng(0)
    N = 10_000
    y = rng.integers(0, 2, N)
    s = rng.integers(0, 3, N)
    X = np.column_stack([(y == 0).astype(float), rng.standard_normal(N), np.full(N, 3.0)])
    prof = metrics.correlation_profile(X, y, s)
    assert prof["class_corr"][0] == pytest.approx(1.0, abs=1e-12)
    assert prof["class_corr"][1] <= 0.05 and prof["bias_corr"][1] <= 0.05
    assert prof["class_corr"][2] == 0.0 and prof["bias_corr"][2] == 0.0


@settings(max_examples=50, deadline=None)
@given(st.floats(-100, 100).filter(lambda a: abs(a) > 1e-3), st.floats(-1e3, 1e3), st.integers(0, 1000))
def test_correlation_affine_invariance(a, b, seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((50, 3))
    y = rng.integers(0, 3, 50)
    s = rng.integers(0, 2, 50)
    p1 = metrics.correlation_profile(X, y, s)
    X2 = X.copy()
    X2[:, 1] = a * X2[:, 1] + b
    p2 = metrics.correlation_profile(X2, y, s)
    for k in ("class_corr", "bias_corr"):
        np.testing.assert_allclose(p1[k], p2[k], atol=1e-9)


def test_correlation_needs_three_samples():
    with pytest.raises(ValueError):
        metrics.correlation_profile(np.zeros((2, 1)), [0, 1], [0, 1])


def fixture_modes():
    M = [[95, 5], [5, 95]]
    s, y = [], []
    for i in range(2):
        for j in range(2):
            s += [i] * M[i][j]
            y += [j] * M[i][j]
    return np.array(s), np.array(y)


def test_empirical_joint_matches_mode_weights():
    s, y = fixture_modes()
    _, _, wt, w = core.fg_ccdb_weights(s, y, 2)
    n = 10**6
    draws = nn.WeightedSampler(w, seed=21).sample_indices(n)
    E = metrics.empirical_joint_from_sampler(draws, s, y, 2)
    p = wt.W / wt.W.sum()
    assert np.all(np.abs(E - p) <= 3 * np.sqrt(p * (1 - p) / n))


def test_empirical_joint_uniform_weights_tracks_J():
    s, y = fixture_modes()
    n = 10**6
    draws = nn.WeightedSampler(np.ones(s.size), seed=2).sample_indices(n)
    E = metrics.empirical_joint_from_sampler(draws, s, y, 2)
    J = np.array([[0.475, 0.025], [0.025, 0.475]])
    assert np.all(np.abs(E - J) <= 3 * np.sqrt(J * (1 - J) / n))


def test_empirical_joint_one_hot():
    s, y = fixture_modes()
    w = np.zeros(s.size)
    w[100] = 1.0  # first sample of mode (1, 0)
    E = metrics.empirical_joint_from_sampler(nn.WeightedSampler(w).sample_indices(50), s, y, 2)
    assert E.tolist() == [[0.0, 0.0], [1.0, 0.0]]


def test_accuracy():
    assert metrics.accuracy([0, 1, 1], [0, 1, 0]) == pytest.approx(2 / 3)

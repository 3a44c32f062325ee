import numpy as np
import pytest

from dbforge import core, datagen, nn
from dbforge.errors import ConfigInvalid, FormatError


def small(**kw):
    base = dict(n_per_class=100, val_per_class=20, test_per_class=50, d_core=3, d_spur=3)
    base.update(kw)
    return datagen.GeneratorConfig(**base)


def aligned_per_class(ds, col=0):
    return [int(np.sum((ds.labels == c) & (ds.shortcuts[:, col] == c))) for c in range(ds.C)]


def cell_counts(ds, c):
    m = ds.labels == c
    a = ds.shortcuts[m, 0] == c
    b = ds.shortcuts[m, 1] == c
    return [int(np.sum(a & b)), int(np.sum(a & ~b)), int(np.sum(~a & b)), int(np.sum(~a & ~b))]


def test_single_shortcut_counts():
    tr = datagen.generate_single_shortcut(small(rho=0.95))["train"]
    assert aligned_per_class(tr) == [95, 95]
    assert tr.N == 200 and tr.S == 1 and tr.d == 6


def test_half_aligned_confusion():
    tr = datagen.generate(small(rho=0.5))["train"]
    M = core.build_confusion(tr.shortcuts[:, 0], tr.labels, 2)
    assert M.counts.tolist() == [[50, 50], [50, 50]]


def test_ten_classes():
    cfg = small(C=10, n_per_class=1000, rho=0.995, val_per_class=0, test_per_class=0)
    tr = datagen.generate(cfg)["train"]
    assert aligned_per_class(tr) == [995] * 10
    # conflicting samples cycle over the other classes
    for c in range(10):
        conf = tr.shortcuts[(tr.labels == c) & (tr.shortcuts[:, 0] != c), 0]
        assert sorted(conf.tolist()) == sorted([v for v in range(10) if v != c][:5])


@pytest.mark.parametrize("rho, n, cells", [
    ((0.95, 0.95), 400, [361, 19, 19, 1]),
    ((1.0, 1.0), 400, [400, 0, 0, 0]),
    ((0.5, 0.5), 4, [1, 1, 1, 1]),
])
def test_multi_shortcut_cells(rho, n, cells):
    tr = datagen.generate_multi_shortcut(small(rho=rho, n_per_class=n))["train"]
    assert tr.S == 2 and tr.d == 3 + 2 * 3
    for c in range(2):
        assert cell_counts(tr, c) == cells


def test_rounding_remainder_goes_to_largest():
    assert sum(datagen._aligned_counts(7, (0.9, 0.7))) == 7


def test_shape_mismatch_generators():
    with pytest.raises(ConfigInvalid):
        datagen.generate_single_shortcut(small(rho=(0.9, 0.9)))
    with pytest.raises(ConfigInvalid):
        datagen.generate_multi_shortcut(small(rho=0.9))


@pytest.mark.parametrize("kw, key", [
    ({"rho": 0.0}, "rho"), ({"rho": 1.5}, "rho"), ({"C": 1}, "C"),
    ({"d_core": 0}, "d_core"), ({"d_spur": 0}, "d_spur"), ({"noise_std": 0.0}, "noise_std"),
])
def test_invalid_configs(kw, key):
    with pytest.raises(ConfigInvalid) as ei:
        datagen.generate(small(**kw))
    assert ei.value.key == key


def test_weak_shortcut_warns(caplog):
    small(core_sep=3.0, spur_sep=1.0).validate()
    assert "not easier" in caplog.text


def test_deterministic():
    a = datagen.generate(small(rho=0.9, seed=123))
    b = datagen.generate(small(rho=0.9, seed=123))
    c = datagen.generate(small(rho=0.9, seed=124))
    for k in datagen.SPLITS:
        assert a[k] == b[k]
        assert a[k].features.tobytes() == b[k].features.tobytes()
    assert not np.array_equal(a["train"].features, c["train"].features)


def test_splits_use_independent_streams():
    s = datagen.generate(small(rho=0.9, n_per_class=50, val_per_class=50))
    assert not np.array_equal(s["train"].features, s["val"].features)


def test_prefix_stable_in_size():
    # sample k of a class does not depend on how many samples are drawn
    a = datagen.generate(small(rho=1.0, n_per_class=10))["train"]
    b = datagen.generate(small(rho=1.0, n_per_class=20))["train"]
    np.testing.assert_array_equal(a.features[:10], b.features[:10])


def test_unbiased_test_split():
    ts = datagen.generate(small(n_per_class=10, test_per_class=500, rho=0.99))["test"]
    M = core.build_confusion(ts.shortcuts[:, 0], ts.labels, 2)
    assert core.mutual_information(core.estimate_statistics(M).J) <= 0.01


def test_roundtrip(tmp_path):
    ds = datagen.generate(small(rho=(0.9, 0.8)))["train"]
    path = tmp_path / "train.txt"
    datagen.save_dataset(ds, path)
    back = datagen.load_dataset(path)
    assert back == ds
    assert back.features.tobytes() == ds.features.tobytes()
    assert back.name == "train"


def test_header_parse():
    text = "#dbforge-dataset v1 n=4 d=3 c=2 shortcuts=1\n" + "".join(
        f"0.{k},1.5,-2e-3,{k % 2},{(k + 1) % 2}\n" for k in range(4))
    ds = datagen.parse_dataset(text)
    assert (ds.N, ds.d, ds.C, ds.S) == (4, 3, 2, 1)


def test_bad_label_names_row():
    text = "#dbforge-dataset v1 n=2 d=1 c=2 shortcuts=0\n0.5,1\n0.25,5\n"
    with pytest.raises(FormatError) as ei:
        datagen.parse_dataset(text)
    assert ei.value.line == 3
    assert "row 1" in str(ei.value)


@pytest.mark.parametrize("text", [
    "",
    "#dbforge-dataset v2 n=1 d=1 c=2 shortcuts=0\n0.5,1\n",
    "#dbforge-dataset v1 n=2 d=1 c=2 shortcuts=0\n0.5,1\n",
    "#dbforge-dataset v1 n=1 d=2 c=2 shortcuts=0\n0.5,1\n",
    "#dbforge-dataset v1 n=1 d=1 c=2 shortcuts=0\nabc,1\n",
    "#dbforge-dataset v1 n=1 d=1 c=2 shortcuts=0\nnan,1\n",
])
def test_malformed(text):
    with pytest.raises(FormatError):
        datagen.parse_dataset(text)


def test_shortcut_block_separable():
    cfg = datagen.GeneratorConfig(n_per_class=500, rho=0.95, d_core=5, d_spur=5)
    tr = datagen.generate(cfg)["train"]
    spur = tr.features[:, cfg.d_core:]
    sub = datagen.LabeledDataset(spur, tr.shortcuts[:, 0], np.zeros((tr.N, 0), np.int64), 2)
    model = nn.train_erm(sub, nn.Architecture(spur.shape[1], (), 2),
                         nn.TrainConfig(epochs=10, learning_rate=0.05, seed=0))
    aligned = tr.shortcuts[:, 0] == tr.labels
    acc = np.mean(model.predict_labels(spur[aligned]) == tr.labels[aligned])
    assert acc >= 0.99


def test_dataset_validation():
    with pytest.raises(ValueError):
        datagen.LabeledDataset(np.zeros((2, 1)), np.array([0, 2]), np.zeros((2, 0), np.int64), 2)

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dbforge import diagnostics, nn
from dbforge.datagen import LabeledDataset
from dbforge.errors import AllZeroWeights, DimMismatch, DivergenceDetected, FormatError

TOY_X = np.array([[1.0, 1.0], [2.0, 1.5], [-1.0, -1.0], [-1.5, -2.0]])
TOY_Y = np.array([0, 0, 1, 1])


def toy():
    return LabeledDataset(TOY_X, TOY_Y, np.zeros((4, 0), np.int64), 2)


def blob_data(n=200, d=4, C=3, seed=0):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, C, n)
    X = rng.standard_normal((n, d)) + 2.0 * np.eye(C, d)[y]
    return X, y


def test_toy_separable_perfect():
    cfg = nn.TrainConfig(epochs=200, batch_size=4, learning_rate=0.1, optimizer="sgd")
    m = nn.train_erm(toy(), nn.Architecture(2), cfg)
    assert np.array_equal(m.predict_labels(TOY_X), TOY_Y)
    P = nn.predict_proba(m, toy())
    assert np.all(P[np.arange(4), TOY_Y] > 0.5)


def test_zero_lr_unchanged():
    arch = nn.Architecture(2, (5,))
    cfg = nn.TrainConfig(epochs=3, learning_rate=0.0, seed=4)
    m = nn.train_erm(toy(), arch, cfg)
    init = nn.init_model(arch, 4)
    for a, b in zip(m.params, init.params):
        assert np.array_equal(a, b)


def test_single_class_converges():
    ds = LabeledDataset(TOY_X, np.zeros(4, np.int64), np.zeros((4, 0), np.int64), 2)
    m = nn.train_erm(ds, nn.Architecture(2, (4,)), nn.TrainConfig(epochs=100, batch_size=4, learning_rate=0.05))
    assert np.all(m.predict_proba(TOY_X)[:, 0] >= 0.99)


def test_zero_init_uniform():
    m = nn.init_model(nn.Architecture(3, (), 4), scheme="zeros")
    np.testing.assert_array_equal(m.predict_proba(np.random.default_rng(0).random((5, 3))), 0.25)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=6, max_size=6), st.sampled_from([(), (3,), (3, 2)]))
def test_proba_rows_and_argmax(values, hidden):
    X = np.array(values).reshape(2, 3)
    m = nn.init_model(nn.Architecture(3, hidden, 3), seed=1)
    P = m.predict_proba(X)
    np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-9)
    assert np.array_equal(P.argmax(axis=1), m.predict_labels(X))


def test_dim_mismatch():
    m = nn.init_model(nn.Architecture(3))
    with pytest.raises(DimMismatch):
        m.predict_proba(np.zeros((2, 4)))
    with pytest.raises(DimMismatch):
        nn.train_erm(toy(), nn.Architecture(3), nn.TrainConfig())


@pytest.mark.parametrize("hidden, bound", [((), 1e-6), ((8,), 1e-5), ((6, 5), 1e-5)])
def test_gradient_check(hidden, bound):
    X, y = blob_data(n=12, d=4, C=3, seed=2)
    err = nn.gradient_check(nn.Architecture(4, hidden, 3), X, y, seed=9)
    assert err <= bound


def test_gradient_check_with_weight_decay():
    X, y = blob_data(n=10, d=3, C=2)
    assert nn.gradient_check(nn.Architecture(3, (4,), 2), X, y, weight_decay=0.1) <= 1e-5


def test_gradient_check_zero_params_symmetric_input():
    arch = nn.Architecture(2, (), 2)
    zeros = nn.init_model(arch, scheme="zeros").params
    err = nn.gradient_check(arch, np.array([[1.0, -1.0], [-1.0, 1.0]]), np.array([0, 1]), params=zeros)
    assert np.isfinite(err) and err <= 1e-6


def test_sampler_one_hot():
    s = nn.WeightedSampler([1.0, 0.0, 0.0], seed=0)
    assert nn.sample_indices(s, 5).tolist() == [0, 0, 0, 0, 0]


def test_sampler_binomial_bound():
    draws = nn.WeightedSampler([1.0, 1.0], seed=3).sample_indices(10**6)
    assert abs(np.mean(draws == 0) - 0.5) <= 3 * np.sqrt(0.25 / 10**6)


def test_sampler_chi_square():
    w = np.array([1.0, 2.0, 0.5, 7.0, 0.0, 3.0])
    draws = nn.WeightedSampler(w, seed=8).sample_indices(10**6)
    assert diagnostics.oracle_sampler(w, draws).passed


def test_sampler_determinism_and_errors():
    a = nn.WeightedSampler([1, 2, 3], seed=5)
    b = nn.WeightedSampler([1, 2, 3], seed=5)
    assert [a.sample_indices(7).tolist() for _ in range(3)] == [b.sample_indices(7).tolist() for _ in range(3)]
    with pytest.raises(AllZeroWeights):
        nn.WeightedSampler([0.0, 0.0])
    with pytest.raises(ValueError):
        nn.WeightedSampler([1.0, -1.0])
    with pytest.raises(ValueError):
        a.sample_indices(0)


def test_loss_decreases_after_epoch_two():
    X, y = blob_data(n=40, d=2, C=2, seed=0)
    ds = LabeledDataset(X, y, np.zeros((40, 0), np.int64), 2)
    histories = []
    for seed in range(5):
        m = nn.train_erm(ds, nn.Architecture(2), nn.TrainConfig(epochs=30, batch_size=8, learning_rate=0.01, seed=seed))
        histories.append(m.loss_history)
    mean = np.mean(histories, axis=0)
    assert len(mean) == 30
    assert np.all(np.diff(mean[1:]) <= 1e-12)


def test_training_deterministic():
    X, y = blob_data()
    ds = LabeledDataset(X, y, np.zeros((len(y), 0), np.int64), 3)
    arch = nn.Architecture(4, (8,), 3)
    cfg = nn.TrainConfig(epochs=3, seed=2)
    a = nn.train_erm(ds, arch, cfg)
    b = nn.train_erm(ds, arch, cfg)
    assert a.flat_params().tobytes() == b.flat_params().tobytes()
    s1, s2 = nn.WeightedSampler(np.arange(1, len(y) + 1.0), 1), nn.WeightedSampler(np.arange(1, len(y) + 1.0), 1)
    c = nn.train_erm(ds, arch, nn.TrainConfig(epochs=None, iterations=30, seed=2), s1)
    d = nn.train_erm(ds, arch, nn.TrainConfig(epochs=None, iterations=30, seed=2), s2)
    assert c.flat_params().tobytes() == d.flat_params().tobytes()


def test_iteration_budget_and_hook():
    X, y = blob_data(n=50)
    m = nn.init_model(nn.Architecture(4, (), 3))
    seen = []
    nn.fit(m, X, y, nn.TrainConfig(epochs=None, iterations=25, batch_size=10), every=10,
           hook=lambda step, model: seen.append(step))
    assert seen == [10, 20]
    assert len(m.loss_history) == 5


def test_divergence_detected():
    X, y = blob_data(n=20, d=4, C=3)
    m = nn.init_model(nn.Architecture(4, (), 3))
    m.params[0][0, 0] = np.inf
    with pytest.raises(DivergenceDetected) as ei, np.errstate(all="ignore"):
        nn.fit(m, X * 1e300, y, nn.TrainConfig(epochs=1, optimizer="sgd"))
    assert ei.value.step == 0


@pytest.mark.parametrize("kw", [
    {"epochs": None}, {"epochs": 1, "iterations": 1}, {"batch_size": 0},
    {"learning_rate": -1.0}, {"optimizer": "rmsprop"},
])
def test_train_config_validation(kw):
    with pytest.raises(ValueError):
        nn.TrainConfig(**kw).validate()


@pytest.mark.parametrize("hidden", [(), (7,), (5, 3)])
def test_checkpoint_roundtrip(tmp_path, hidden):
    m = nn.init_model(nn.Architecture(4, hidden, 3), seed=6)
    X, y = blob_data()
    nn.fit(m, X, y, nn.TrainConfig(epochs=2))
    path = tmp_path / "m.model"
    nn.save_model(m, path)
    back = nn.load_model(path)
    assert back.arch == m.arch and back.init == m.init
    for a, b in zip(m.params, back.params):
        assert a.tobytes() == b.tobytes()
    assert back.predict_proba(X).tobytes() == m.predict_proba(X).tobytes()
    assert nn.dumps_model(back) == path.read_text()


@pytest.mark.parametrize("mutate", [
    lambda t: t.replace("v1", "v9", 1),
    lambda t: t.replace("arch input", "arch inptu", 1),
    lambda t: t.rsplit("\n", 2)[0] + "\n",
    lambda t: t + "extra\n",
    lambda t: t.replace("param 1", "param 2", 1),
])
def test_checkpoint_malformed(mutate):
    text = nn.dumps_model(nn.init_model(nn.Architecture(2, (), 2)))
    with pytest.raises(FormatError):
        nn.loads_model(mutate(text))


def test_architecture_limits():
    with pytest.raises(ValueError):
        nn.Architecture(2, (3, 3, 3))
    assert nn.Architecture(10, (32,), 2).n_params == 10 * 32 + 32 + 32 * 2 + 2

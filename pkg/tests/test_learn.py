import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tsp_sparsify.features import FEATURE_VERSION, N_FEATURES, Standardizer
from tsp_sparsify.learn import (
    LinearModel,
    ModelFormatError,
    TrainConfig,
    TrainSet,
    class_weights,
    dumps_model,
    feature_importance,
    gradient,
    load_model,
    loads_model,
    objective,
    save_model,
    score_edges,
    train,
    train_logistic,
    train_svm,
    write_training_log,
)


def finite_difference(kind, w, b, Z, y, C, cw, h=1e-5):
    gw = np.zeros_like(w)
    for k in range(len(w)):
        e = np.zeros_like(w)
        e[k] = h
        gw[k] = (objective(kind, w + e, b, Z, y, C, cw) - objective(kind, w - e, b, Z, y, C, cw)) / (2 * h)
    gb = (objective(kind, w, b + h, Z, y, C, cw) - objective(kind, w, b - h, Z, y, C, cw)) / (2 * h)
    return gw, gb


def max_relative_error(kind, seed):
    rng = np.random.default_rng(seed)
    Z = rng.normal(size=(64, N_FEATURES))
    y = (rng.random(64) < 0.2).astype(float)
    w = rng.normal(size=N_FEATURES) * 0.5
    b = float(rng.normal())
    C = float(rng.uniform(0.1, 3.0))
    cw = class_weights(y.astype(int))
    ga, gba = gradient(kind, w, b, Z, y, C, cw)
    gf, gbf = finite_difference(kind, w, b, Z, y, C, cw)
    a = np.append(ga, gba)
    f = np.append(gf, gbf)
    return float(np.max(np.abs(a - f) / np.maximum(np.maximum(np.abs(a), np.abs(f)), 1e-8)))


@pytest.mark.parametrize("kind", ["logistic", "squared_hinge"])
@pytest.mark.parametrize("seed", range(10))
def test_gradient_matches_finite_differences(kind, seed):
    assert max_relative_error(kind, seed) < 1e-4


def test_class_weights_balance():
    y = np.array([1] * 10 + [0] * 90)
    w0, w1 = class_weights(y)
    assert w0 * 90 == pytest.approx(w1 * 10)
    assert w0 * 90 + w1 * 10 == pytest.approx(100)


def separable(seed=0, m=400):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(m, N_FEATURES))
    X[:, [9, 14, 15]] = (rng.random((m, 3)) < 0.5).astype(float)
    y = (X[:, 0] + 2 * X[:, 14] - 1.0 + 0.3 * rng.normal(size=m) > 0).astype(int)
    return TrainSet(X, y, np.repeat(np.arange(m // 20), 20))


@pytest.mark.parametrize("trainer", [train_logistic, train_svm])
def test_training_decreases_objective_and_ranks(trainer):
    ts = separable()
    m = trainer(ts)
    objs = [f for _, f, _ in m.history]
    assert all(b <= a + 1e-12 for a, b in zip(objs, objs[1:]))
    s = score_edges(m, ts.X)
    assert np.all((s > 0) & (s < 1))
    assert s[ts.y == 1].mean() > s[ts.y == 0].mean() + 0.2
    imp = feature_importance(m)
    assert sum(imp["features"].values()) == pytest.approx(1.0)
    assert sum(imp["families"].values()) == pytest.approx(1.0)


def test_training_is_deterministic():
    ts = separable(3)
    a, b = train_logistic(ts), train_logistic(ts)
    assert np.array_equal(a.weights, b.weights) and a.bias == b.bias


def test_single_mode_ignores_provenance():
    ts = separable(1)
    single = TrainSet(ts.X, ts.y, ts.groups, mode="single")
    m = train_logistic(single)
    assert np.all(m.weights[14:] == 0)


def test_train_aliases_and_errors():
    ts = separable(2, m=100)
    assert train("lr", ts).loss_kind == "logistic"
    assert train("svm", ts).loss_kind == "squared_hinge"
    with pytest.raises(ValueError):
        train("tree", ts)
    bad = ts.X.copy()
    bad[0, 0] = np.nan
    with pytest.raises(ValueError):
        train_logistic(TrainSet(bad, ts.y, ts.groups))
    with pytest.raises(ValueError):
        TrainSet(ts.X, np.full(len(ts.y), 2), ts.groups)


def test_trainset_concat():
    a, b = separable(0, 40), separable(1, 60)
    c = TrainSet.concat([a, b])
    assert len(c) == 100
    with pytest.raises(ValueError):
        TrainSet.concat([a, TrainSet(b.X, b.y, b.groups, mode="single")])


def test_model_round_trip(tmp_path):
    m = train_svm(separable(4))
    m.calibrated_eta = 0.75
    path = tmp_path / "model.txt"
    save_model(m, path)
    back = load_model(path)
    assert np.array_equal(back.weights, m.weights)
    assert back.bias == m.bias and back.calibrated_eta == 0.75
    assert back.loss_kind == "squared_hinge"
    X = separable(5).X
    assert np.array_equal(score_edges(back, X), score_edges(m, X))


@pytest.mark.parametrize("field", ["weights", "bias", "std_mask", "feature_version"])
def test_model_missing_field(field):
    text = dumps_model(LinearModel.zero())
    broken = "\n".join(ln for ln in text.splitlines() if not ln.startswith(field + " "))
    with pytest.raises(ModelFormatError, match=field):
        loads_model(broken)


def test_model_version_mismatch():
    text = dumps_model(LinearModel.zero())
    with pytest.raises(ModelFormatError):
        loads_model(text.replace(FEATURE_VERSION, "edge15-v0"))
    m = LinearModel.zero()
    with pytest.raises(ModelFormatError):
        score_edges(m, np.zeros((1, N_FEATURES)), feature_version="other")


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=N_FEATURES, max_size=N_FEATURES), st.floats(-10, 10))
def test_model_text_is_exact(w, b):
    m = LinearModel(np.array(w), b, "logistic", Standardizer.identity())
    back = loads_model(dumps_model(m))
    assert np.array_equal(back.weights, m.weights) and back.bias == m.bias


def test_training_log_format():
    m = train_logistic(separable(6, 100))
    log = write_training_log(m.history).splitlines()
    assert log[0] == "iteration,objective,grad_norm"
    assert len(log) == len(m.history) + 1

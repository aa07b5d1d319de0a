import numpy as np
import pytest

from flowprompt.baseline import (
    LogRegModel,
    Standardizer,
    balanced_class_weights,
    fit_transform,
    load_preprocessor,
    objective_and_gradient,
    predict_proba,
    save_preprocessor,
    train_logreg,
    transform,
)
from flowprompt.dataset import FlowRecord
from flowprompt.errors import DimensionMismatch, EmptyTrain, NonFiniteLoss, SingleClass
from flowprompt.synthetic import synthetic_records

from conftest import make_record


def full(rec: FlowRecord, **changes) -> FlowRecord:
    fields = {name: getattr(rec, name) for name in rec.__slots__}
    fields.update(changes)
    return FlowRecord(**fields)


def test_zscore_identity_and_constant_column():
    recs = [make_record(id=1, dur=3.0, spkts=4), make_record(id=2, dur=7.0, spkts=4)]
    std = Standardizer.fit(recs)
    z = std.transform([make_record(id=3, dur=5.0, spkts=4)])
    names = std.names
    assert std.means[names.index("dur")] == 5.0 and std.stds[names.index("dur")] == 2.0
    assert z[0, names.index("dur")] == 0.0
    assert np.all(std.transform(recs)[:, names.index("spkts")] == 0.0)


def test_dimension_46():
    base = synthetic_records(12, seed=0)
    protos, services, states = ["tcp", "udp"], ["http", "dns", "ftp"], ["FIN", "CON"]
    recs = [full(r, proto=protos[i % 2], service=services[i % 3], state=states[(i // 2) % 2]) for i, r in enumerate(base)]
    _, ohe, x = fit_transform(recs)
    assert x.shape == (12, 46)
    assert ohe.categories == {"proto": protos, "service": services, "state": states}


def test_unknown_category_and_consistency():
    train = synthetic_records(40, seed=1)
    std, ohe, x = fit_transform(train)
    assert np.array_equal(transform(std, ohe, train), x)
    odd = full(train[0], service="never-seen")
    row = transform(std, ohe, [odd])[0]
    n_num = len(std.names)
    block = slice(n_num + len(ohe.categories["proto"]), n_num + len(ohe.categories["proto"]) + len(ohe.categories["service"]))
    assert np.all(row[block] == 0.0)
    assert np.array_equal(row[:n_num], x[0, :n_num])


def test_dimension_mismatch_and_empty():
    std, ohe, _ = fit_transform(synthetic_records(10, seed=2))
    with pytest.raises(DimensionMismatch):
        transform(std, ohe, [make_record()])
    with pytest.raises(EmptyTrain):
        fit_transform([])


def test_preprocessor_round_trip(tmp_path):
    recs = synthetic_records(30, seed=5)
    std, ohe, x = fit_transform(recs)
    save_preprocessor(tmp_path / "pre.json", std, ohe)
    std2, ohe2 = load_preprocessor(tmp_path / "pre.json")
    assert np.array_equal(transform(std2, ohe2, recs), x)


def blobs(n=200, seed=0):
    rng = np.random.default_rng(seed)
    y = np.repeat([0, 1], n // 2)
    x = rng.normal(size=(n, 2)) * 0.5 + np.where(y[:, None] == 1, 2.0, -2.0)
    return x, y


def test_separable_blobs():
    x, y = blobs()
    model = train_logreg(x, y, l2=1e-3, epochs=100, step=0.5, seed=0)
    acc = float(((predict_proba(model, x) >= 0.5) == y).mean())
    assert acc >= 0.99
    assert all(b <= a for a, b in zip(model.history, model.history[1:]))


def test_strong_l2_shrinks():
    x, y = blobs()
    model = train_logreg(x, y, l2=1e6, epochs=50, step=0.5, seed=0)
    assert np.linalg.norm(model.weights) < 1e-2


def finite_difference(w, b, x, y, l2, cw, h=1e-6):
    def f(wv, bv):
        return objective_and_gradient(wv, bv, x, y, l2, cw)[0]
    gw = np.array([(f(w + h * e, b) - f(w - h * e, b)) / (2 * h) for e in np.eye(w.size)])
    return gw, (f(w, b + h) - f(w, b - h)) / (2 * h)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(42)
    for _ in range(20):
        n, d = rng.integers(5, 30), rng.integers(1, 6)
        x = rng.normal(size=(n, d))
        y = rng.integers(0, 2, size=n)
        y[0], y[1] = 0, 1
        w, b, l2 = rng.normal(size=d), float(rng.normal()), float(rng.uniform(0, 1))
        cw = balanced_class_weights(y)
        _, gw, gb = objective_and_gradient(w, b, x, y, l2, cw)
        nw, nb = finite_difference(w, b, x, y, l2, cw)
        assert np.max(np.abs(gw - nw)) < 1e-4 and abs(gb - nb) < 1e-4


def test_class_weights():
    assert balanced_class_weights(np.array([1, 0, 0, 0])) == {0: 4 / 6, 1: 2.0}


def test_predict_proba_stability():
    zero = LogRegModel(np.zeros(3), 0.0, 0.0, {0: 1.0, 1: 1.0})
    assert np.all(predict_proba(zero, np.ones((4, 3))) == 0.5)
    big = LogRegModel(np.zeros(3), 40.0, 0.0, {0: 1.0, 1: 1.0})
    with np.errstate(over="raise"):
        p = predict_proba(big, np.ones((2, 3)))
        q = predict_proba(LogRegModel(np.zeros(3), -800.0, 0.0, {}), np.ones((1, 3)))
    assert np.all(np.abs(p - 1.0) <= 1e-15) and q[0] == 0.0
    with pytest.raises(DimensionMismatch):
        predict_proba(zero, np.ones((1, 4)))


def test_training_errors():
    x, y = blobs()
    with pytest.raises(SingleClass):
        train_logreg(x, np.zeros(len(y)))
    with pytest.raises(EmptyTrain):
        train_logreg(np.zeros((0, 2)), [])
    bad = x.copy()
    bad[0, 0] = np.inf
    with pytest.raises(NonFiniteLoss):
        train_logreg(bad, y)


def test_model_json_and_determinism():
    x, y = blobs(seed=3)
    a = train_logreg(x, y, epochs=20, seed=4)
    b = train_logreg(x, y, epochs=20, seed=4)
    assert np.array_equal(a.weights, b.weights)
    c = LogRegModel.from_json(a.to_json())
    assert np.array_equal(c.weights, a.weights) and c.bias == a.bias and c.class_weights == a.class_weights

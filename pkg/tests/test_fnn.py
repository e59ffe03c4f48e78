import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_portfolio
from ptu_reserving.errors import DegenerateFeatureError, DimensionError, ValidationError
from ptu_reserving.fnn import (
    FnnModel,
    NormStats,
    TrainConfig,
    delay_feature,
    featurize,
    fit_norm_stats,
    load_models,
    month_feature,
    save_models,
    train,
)

FAST = TrainConfig(max_epochs=60, stop_patience=10, batch_size=256, lr=1e-2)


def numeric_grad(model, X, y, h=1e-5):
    out = []
    for p in model.params():
        g = np.zeros_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for k in range(flat.size):
            old = flat[k]
            flat[k] = old + h
            up, _ = model.loss_and_grad(X, y)
            flat[k] = old - h
            down, _ = model.loss_and_grad(X, y)
            flat[k] = old
            gflat[k] = (up - down) / (2 * h)
        out.append(g)
    return out


def grad_rel_error(model, X, y):
    _, analytic = model.loss_and_grad(X, y)
    a = np.concatenate([g.ravel() for g in analytic])
    n = np.concatenate([g.ravel() for g in numeric_grad(model, X, y)])
    return np.linalg.norm(a - n) / max(np.linalg.norm(a), np.linalg.norm(n))


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(5):
        dim = int(rng.choice([5, 7]))
        model = FnnModel.init(dim, rng=rng)
        for b in model.biases:
            b[:] = rng.normal(0, 0.3, size=b.shape)
        X = rng.normal(size=(16, dim))
        y = rng.lognormal(0, 0.5, size=16)
        worst = max(worst, grad_rel_error(model, X, y))
    assert worst < 1e-5


@pytest.mark.parametrize("dim,count", [(5, 606), (7, 646)])
def test_parameter_counts(dim, count):
    m = FnnModel.init(dim, rng=0)
    assert m.n_params == count
    assert m.layer_sizes == (dim, 20, 15, 10, 1)


def test_forward_matches_scalar_loops():
    rng = np.random.default_rng(1)
    m = FnnModel.init(5, rng=rng)
    for b in m.biases:
        b[:] = rng.normal(size=b.shape)
    x = rng.normal(size=5)
    h = list(x)
    for L, (w, b) in enumerate(zip(m.weights, m.biases)):
        z = [sum(h[a] * w[a, c] for a in range(len(h))) + b[c] for c in range(w.shape[1])]
        h = [math.tanh(v) for v in z] if L < len(m.weights) - 1 else [math.exp(z[0])]
    assert m(x)[0] == pytest.approx(h[0], rel=1e-13)


def test_output_is_positive():
    m = FnnModel.init(5, rng=3)
    X = np.random.default_rng(0).normal(scale=50, size=(200, 5))
    assert (m(X) > 0).all()


def test_wrong_input_width():
    m = FnnModel.init(5, rng=0)
    with pytest.raises(DimensionError):
        m(np.zeros((3, 7)))


def test_init_ranges():
    m = FnnModel.init(5, rng=11)
    for w, b in zip(m.weights, m.biases):
        assert np.abs(w).max() <= 1 / math.sqrt(w.shape[0])
        assert not b.any()


def test_json_round_trip(tmp_path):
    m = FnnModel.init(7, rng=5)
    path = tmp_path / "m.json"
    save_models(path, {"j0_k0": m}, extra={"note": 1})
    models, payload = load_models(path)
    back = models["j0_k0"]
    X = np.random.default_rng(0).normal(size=(10, 7))
    np.testing.assert_array_equal(back(X), m(X))
    assert payload["note"] == 1
    assert payload["models"]["j0_k0"]["activations"][-1] == "exp"


# -- features ----------------------------------------------------------------------


def test_norm_stats_on_two_values():
    # log(max(1, x)) of {1, e^2} is {0, 2}: mean 1, population sd 1
    p = make_portfolio([(1, 0, [1.0, math.exp(2)]), (2, 0, [1.0])], 2, 1)
    s = fit_norm_stats(p)
    # three observed cells: 0, 2, 0
    assert s.pay_mean == pytest.approx(2 / 3)
    p2 = make_portfolio([(1, 0, [1.0, math.exp(2)])], 2, 1)
    s2 = fit_norm_stats(p2)
    assert (s2.pay_mean, s2.pay_sd) == pytest.approx((1.0, 1.0))


def test_constant_payments_are_degenerate():
    p = make_portfolio([(1, 0, [5, 5]), (2, 0, [5])], 2, 1)
    with pytest.raises(DegenerateFeatureError):
        fit_norm_stats(p)


def test_feature_values():
    stats = NormStats(1.0, 2.0)
    X = featurize([math.e, 0.5], [1, 0], [0, 1], [1, 12], [0, 10_000], stats)
    np.testing.assert_allclose(X[:, 0], [0.0, -0.5])
    np.testing.assert_array_equal(X[:, 1], [1, 0])
    np.testing.assert_array_equal(X[:, 3], [0, 1])
    np.testing.assert_allclose(X[:, 4], [0.0, 1.0])
    assert X.shape == (2, 5)


def test_incurred_features():
    stats = NormStats(0.0, 1.0, 0.0, 1.0, 1.0, 2.0)
    X = featurize([math.e], [1], [0], [6], [30], stats, incurred=[math.e**2])
    assert X.shape == (1, 7)
    assert X[0, 5] == pytest.approx(2.0)
    assert X[0, 6] == pytest.approx((math.e**2 - math.e - 1.0) / 2.0)
    with pytest.raises(DimensionError):
        featurize([1.0], [1], [0], [6], [30], stats)
    with pytest.raises(DimensionError):
        featurize([1.0], [1], [0], [6], [30], NormStats(0, 1), incurred=[1.0])


@settings(max_examples=50, deadline=None)
@given(month=st.integers(1, 12), days=st.integers(0, 5000))
def test_bounded_features(month, days):
    assert 0.0 <= month_feature(month) <= 1.0
    assert 0.0 <= delay_feature(days) <= 1.0


# -- training ------------------------------------------------------------------------


def test_constant_target_is_learned():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(800, 5))
    y = np.full(800, 3.25)
    m = train(X, y, FAST)
    assert np.abs(m(X) / 3.25 - 1).max() < 0.05


def test_training_reduces_loss():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(2000, 5))
    y = np.exp(0.5 * X[:, 0] + 0.3 * X[:, 1])
    m, hist = train(X, y, FAST, return_history=True)
    base = np.mean((y - y.mean()) ** 2)
    assert np.mean((m(X) - y) ** 2) < 0.3 * base
    assert hist.epochs >= 1 and hist.best_epoch >= 0
    assert min(hist.val_loss) == pytest.approx(min(hist.val_loss[: hist.best_epoch + 1]))


def test_training_is_deterministic():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(500, 5))
    y = rng.lognormal(size=500)
    a = train(X, y, FAST)
    b = train(X, y, FAST)
    for wa, wb in zip(a.params(), b.params()):
        np.testing.assert_array_equal(wa, wb)


def test_float32_training_returns_float64_model():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(300, 5))
    y = rng.lognormal(size=300)
    m = train(X, y, TrainConfig(max_epochs=5, dtype="float32"))
    assert m.weights[0].dtype == np.float64


def test_lr_floor_stops_training():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(100, 5))
    y = rng.lognormal(size=100)
    cfg = TrainConfig(max_epochs=500, lr=1e-3, min_lr=9.5e-4, plateau_patience=1, stop_patience=400)
    _, hist = train(X, y, cfg, return_history=True)
    assert hist.stop_reason in ("learning rate floor", "no improvement")
    assert hist.epochs < 500


def test_bad_targets():
    with pytest.raises(ValidationError):
        train(np.zeros((3, 5)), np.array([1.0, -1.0, 1.0]))
    with pytest.raises(DimensionError):
        train(np.zeros((3, 5)), np.ones(4))


def test_config_validation():
    with pytest.raises(ValidationError):
        TrainConfig(dtype="float16")
    with pytest.raises(ValidationError):
        TrainConfig(val_fraction=1.0)
    assert TrainConfig.from_dict(TrainConfig().to_dict()) == TrainConfig()


def test_penalty_hook_gradient():
    rng = np.random.default_rng(3)
    model = FnnModel.init(5, hidden=(4, 3), rng=rng)
    X = rng.normal(size=(10, 5))
    y = rng.lognormal(size=10)
    prior = rng.lognormal(size=10)

    def penalty(out):
        d = out - prior
        return 0.3 * np.mean(d * d), 0.6 * d / len(d)

    loss, analytic = model.loss_and_grad(X, y, penalty)
    assert loss > model.loss_and_grad(X, y)[0]
    h = 1e-6
    w = model.weights[0]
    old = w[0, 0]
    w[0, 0] = old + h
    up = model.loss_and_grad(X, y, penalty)[0]
    w[0, 0] = old - h
    down = model.loss_and_grad(X, y, penalty)[0]
    w[0, 0] = old
    assert analytic[0][0, 0] == pytest.approx((up - down) / (2 * h), rel=1e-6)


def test_penalty_hook_pulls_towards_prior():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(600, 5))
    y = rng.lognormal(size=600)
    calls = []

    def penalty(rows, out):
        calls.append(len(rows))
        d = out - 10.0
        return 50.0 * np.mean(d * d), 100.0 * d / len(d)

    m = train(X, y, FAST, penalty=penalty)
    assert calls and max(calls) <= FAST.batch_size
    assert m(X).mean() > 3 * y.mean()

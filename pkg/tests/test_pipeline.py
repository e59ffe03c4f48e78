import numpy as np
import pandas as pd
import pytest

from ptu_reserving.claims import rbns_ptu, true_oll
from ptu_reserving.errors import RecursionOrderError, UnavailableError, ValidationError
from ptu_reserving.fnn import FnnModel, TrainConfig
from ptu_reserving.pipeline import (
    REPORT_COLUMNS,
    Ensemble,
    PipelineConfig,
    balance_scale,
    build_learning_set,
    evaluate,
    fit_step,
    individual_rmse,
    member_seeds,
    run_pipeline,
    run_pipeline_oracle_targets,
)
from ptu_reserving.simulate import SimConfig, simulate

QUICK = PipelineConfig(
    n_seeds=2,
    train=TrainConfig(max_epochs=40, stop_patience=8, batch_size=512, lr=5e-3, dtype="float32"),
)


@pytest.fixture(scope="module")
def square():
    return simulate(SimConfig(claims_per_period=250, seed=11))


@pytest.fixture(scope="module")
def result(square):
    return run_pipeline(square, QUICK)


def test_learning_set_members(square):
    p = square.censored()
    I, J = p.n_acc, p.n_dev
    assert (I, J) == (5, 4)
    appended = np.full(len(p), np.nan)
    # j = 3 uses only the fully developed period 1
    ls = build_learning_set(p, 3, appended)
    assert set(p.accident_period[ls.rows]) == {1}
    assert not ls.appended.any()
    np.testing.assert_array_equal(ls.targets, p.payments[ls.rows, J])
    # j = 2 needs predictions for period 2
    with pytest.raises(RecursionOrderError):
        build_learning_set(p, 2, appended)
    appended[p.accident_period == 2] = 123.0
    ls = build_learning_set(p, 2, appended)
    assert set(p.accident_period[ls.rows]) == {1, 2}
    assert (p.report_lag[ls.rows] <= 2).all()
    assert ls.appended.sum() == ((p.accident_period == 2) & (p.report_lag <= 2)).sum()
    assert (ls.targets[ls.appended] == 123.0).all()
    assert ls.history(p).shape == (len(ls), 3)


def test_learning_set_cohort_size(square):
    p = square.censored()
    appended = np.where(p.accident_period > 1, 1.0, np.nan)
    for j in range(p.n_dev):
        ls = build_learning_set(p, j, appended)
        want = ((p.accident_period <= p.n_acc - j - 1) & (p.report_lag <= j)).sum()
        assert len(ls) == want


def test_learning_set_bad_lag(square):
    p = square.censored()
    with pytest.raises(ValidationError):
        build_learning_set(p, p.n_dev, np.zeros(len(p)))


def test_balance_scale():
    assert balance_scale([1, 2, 3], [2, 2, 2]) == 1.0
    assert balance_scale([2, 2], [1, 1]) == 2.0


def test_ensemble_is_mean_of_scaled_members():
    rng = np.random.default_rng(0)
    models = [FnnModel.init(5, rng=rng) for _ in range(3)]
    X = rng.normal(size=(7, 5))
    ens = Ensemble(models, [1.0, 2.0, 0.5])
    want = (models[0](X) + 2 * models[1](X) + 0.5 * models[2](X)) / 3
    np.testing.assert_allclose(ens(X), want, rtol=1e-14)


def test_fit_step_balances_each_member():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(400, 5))
    y = rng.lognormal(size=400)
    ens = fit_step(X, y, QUICK.train, seeds=[1, 2, 3])
    for row in ens.member_predictions(X):
        assert abs(row.sum() / y.sum() - 1) < 1e-10
    assert abs(ens(X).sum() / y.sum() - 1) < 1e-10


def test_member_seeds_distinct():
    seeds = [s for j in range(4) for s in member_seeds(0, j, 10)]
    assert len(set(seeds)) == 40
    assert member_seeds(0, 2, 3) == member_seeds(0, 2, 5)[:3]
    assert member_seeds(1, 2, 3) != member_seeds(0, 2, 3)


def test_every_step_is_balanced(result):
    assert len(result.steps) == 4
    assert [s.j for s in result.steps] == [3, 2, 1, 0]
    assert max(s.balance_error for s in result.steps) < 1e-10


def test_predictions_cover_rbns_claims(result, square):
    p = square.censored()
    assert np.isfinite(result.prediction).all()
    dev = p.accident_period == 1
    np.testing.assert_array_equal(result.prediction[dev], p.payments[dev, p.n_dev])
    np.testing.assert_array_equal(result.reserve[dev], 0.0)
    assert result.total_reserve == pytest.approx(result.reserves_by_period().sum())


def test_rbns_column_matches_chain_ladder(result, square):
    np.testing.assert_allclose(result.rbns_cl_by_period(), rbns_ptu(square).reserves, rtol=1e-12, atol=1e-9)


def test_deterministic(square, result):
    again = run_pipeline(square, QUICK)
    np.testing.assert_array_equal(again.prediction, result.prediction)


def test_flat_development_has_no_reserve():
    cfg = SimConfig(claims_per_period=300, dev_factors=(1, 1, 1, 1), dev_noise=0.0, seed=5)
    res = run_pipeline(simulate(cfg), PipelineConfig(n_seeds=2, train=TrainConfig(dtype="float32")))
    rbns = res.accident_period > 1
    assert abs(res.reserve[rbns].sum()) < 0.02 * res.paid_to_date[rbns].sum()


def test_evaluate_table(result, square):
    df = evaluate(result, square)
    assert list(df.columns) == list(REPORT_COLUMNS)
    assert len(df) == square.n_acc + 1
    assert df.iloc[-1]["accident_period"] == "total"
    assert np.isnan(df.iloc[-1]["fnn_ind_rmse"])
    oll, total = true_oll(square)
    np.testing.assert_allclose(df["true_oll"][:-1].astype(float), oll)
    assert df.iloc[-1]["true_oll"] == pytest.approx(total)
    body = df.iloc[:-1]
    np.testing.assert_allclose(body["fnn_error"], body["fnn"] - body["true_oll"])

    # brute-force per-claim RMSE
    ult = dict(zip(square.claim_id, square.payments[:, -1]))
    for i in range(1, square.n_acc + 1):
        sel = result.accident_period == i
        errs = [result.prediction[k] - ult[result.claim_id[k]] for k in np.flatnonzero(sel)]
        want = np.sqrt(np.mean(np.square(errs)))
        assert df.iloc[i - 1]["fnn_ind_rmse"] == pytest.approx(want, rel=1e-12)
    pooled = individual_rmse(result, square)
    sel = result.accident_period > 1
    errs = [result.prediction[k] - ult[result.claim_id[k]] for k in np.flatnonzero(sel)]
    assert pooled == pytest.approx(np.sqrt(np.mean(np.square(errs))), rel=1e-12)


def test_oracle_targets_needs_square(square):
    with pytest.raises(UnavailableError):
        run_pipeline_oracle_targets(square.censored(), QUICK)
    res = run_pipeline_oracle_targets(square, QUICK)
    assert res.oracle_targets
    assert all(s.balance_error < 1e-10 for s in res.steps)


def test_incurred_pipeline_uses_seven_inputs():
    sq = simulate(SimConfig(claims_per_period=150, include_incurred=True, seed=2))
    res = run_pipeline(sq, PipelineConfig(use_incurred=True, n_seeds=1, train=QUICK.train))
    assert res.ensembles[0].models[0].input_dim == 7
    assert res.ensembles[0].models[0].n_params == 646


def test_frames(result):
    assert list(result.predictions_frame().columns) == ["claim_id", "accident_period", "prediction", "paid_to_date", "reserve"]
    rf = result.reserves_frame()
    assert rf.iloc[-1]["fnn"] == pytest.approx(result.total_reserve)
    assert isinstance(result.steps_frame(), pd.DataFrame)


def test_config_round_trip():
    d = QUICK.to_dict()
    assert PipelineConfig.from_dict(d) == QUICK
    with pytest.raises(ValidationError):
        PipelineConfig.from_dict({"bogus": 1})

"""Recursive one-shot individual claims reserving.

For ``j = J-1, ..., 0`` a network ``mu_j`` maps the claim state at lag ``j``
directly to the ultimate. Its learning set holds the reported claims
(``T <= j``) of all accident periods ``i <= I - j - 1``: fully developed
periods with their true ultimates, younger ones with the ultimates predicted
at earlier steps. The fitted ensemble then predicts accident period ``I - j``
and those predictions are appended for the next step.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from .claims import rbns_ptu, true_oll
from .errors import RecursionOrderError, UnavailableError, ValidationError
from .fnn import TrainConfig, fit_norm_stats, portfolio_features, train, with_seed

log = logging.getLogger(__name__)

REPORT_COLUMNS = (
    "accident_period", "true_oll", "rbns_cl", "fnn", "cl_error", "fnn_error",
    "cl_ind_rmse", "fnn_ind_rmse",
)
PREDICTION_COLUMNS = ("claim_id", "accident_period", "prediction", "paid_to_date", "reserve")


@dataclass(frozen=True)
class PipelineConfig:
    use_incurred: bool = False
    n_seeds: int = 10
    master_seed: int = 0
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if self.n_seeds < 1:
            raise ValidationError("n_seeds must be at least 1")

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValidationError(f"unknown pipeline settings {sorted(unknown)}")
        tc = TrainConfig.from_dict(d.pop("train", {}))
        return cls(train=tc, **d)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self):
        return {
            "use_incurred": self.use_incurred,
            "n_seeds": self.n_seeds,
            "master_seed": self.master_seed,
            "train": self.train.to_dict(),
        }


@dataclass(frozen=True)
class LearningSet:
    """Learning data for lag ``j``.

    ``rows`` index the censored portfolio; ``appended`` flags targets that are
    earlier predictions rather than observed ultimates. The full histories
    ``0..j`` stay reachable through ``rows``; the networks use lag ``j`` only.
    """

    j: int
    rows: np.ndarray
    targets: np.ndarray
    appended: np.ndarray

    def __len__(self):
        return len(self.rows)

    def history(self, portfolio):
        return portfolio.payments[self.rows, : self.j + 1]


def build_learning_set(portfolio, j, appended):
    """Assemble the learning set of lag ``j``.

    ``appended`` is an array aligned with the (censored) portfolio holding
    predicted ultimates; it must be filled for every reported claim of accident
    periods ``I-J+1 .. I-j-1``.
    """
    p = portfolio
    n_acc, n_dev = p.n_acc, p.n_dev
    if not 0 <= j <= n_dev - 1:
        raise ValidationError(f"lag {j} outside 0..J-1")
    appended = np.asarray(appended, dtype=float)
    if appended.shape != (len(p),):
        raise ValidationError("appended predictions must align with the portfolio")
    i, T = p.accident_period, p.report_lag
    in_cohort = T <= j
    observed = in_cohort & (i <= n_acc - n_dev)
    estimated = in_cohort & (i > n_acc - n_dev) & (i <= n_acc - j - 1)
    if not np.isfinite(appended[estimated]).all():
        bad = np.unique(i[estimated & ~np.isfinite(appended)])
        raise RecursionOrderError(f"lag {j}: no appended prediction yet for accident periods {bad.tolist()}")
    rows = np.flatnonzero(observed | estimated)
    targets = np.where(observed[rows], p.payments[rows, n_dev], appended[rows])
    return LearningSet(j=j, rows=rows, targets=targets, appended=estimated[rows])


class Ensemble:
    """Average of balance-corrected member networks."""

    def __init__(self, models, scales):
        self.models = list(models)
        self.scales = np.asarray(scales, dtype=float)

    def member_predictions(self, X):
        return np.stack([s * m.forward(X) for m, s in zip(self.models, self.scales)])

    def predict(self, X):
        return self.member_predictions(X).mean(axis=0)

    __call__ = predict


def balance_scale(targets, raw_predictions):
    """Multiplicative correction making in-sample predictions sum to the targets."""
    total = float(np.sum(targets))
    denom = float(np.sum(raw_predictions))
    if total == 0.0:
        log.warning("degenerate cohort: targets sum to zero, balance correction collapses predictor")
    return total / denom


def member_seeds(master_seed, j, n_seeds):
    """Training seeds of the ensemble at lag ``j``; independent across lags."""
    return [
        int(np.random.SeedSequence([master_seed, j, k]).generate_state(1)[0])
        for k in range(n_seeds)
    ]


def fit_step(X, y, config=TrainConfig(), seeds=range(10)):
    """Train one network per seed, balance-correct each, and return the ensemble."""
    models, scales = [], []
    for seed in seeds:
        model = train(X, y, with_seed(config, seed))
        models.append(model)
        scales.append(balance_scale(y, model.forward(X)))
    return Ensemble(models, scales)


@dataclass
class StepReport:
    j: int
    accident_period: int
    n_learn: int
    n_appended: int
    n_predicted: int
    target_sum: float
    fitted_sum: float
    scales: list

    @property
    def balance_error(self):
        if self.target_sum == 0:
            return abs(self.fitted_sum)
        return abs(self.fitted_sum - self.target_sum) / abs(self.target_sum)


@dataclass
class PipelineResult:
    """Per-claim ultimates of the censored portfolio plus per-period reserves."""

    claim_id: np.ndarray
    accident_period: np.ndarray
    prediction: np.ndarray
    paid_to_date: np.ndarray
    status_to_date: np.ndarray
    accident_month: np.ndarray
    rbns_cl: np.ndarray
    steps: list
    ensembles: dict
    n_acc: int
    n_dev: int
    oracle_targets: bool = False

    @property
    def reserve(self):
        r = self.prediction - self.paid_to_date
        return np.where(self.accident_period <= self.n_acc - self.n_dev, 0.0, r)

    @property
    def rbns_cl_reserve(self):
        r = self.rbns_cl - self.paid_to_date
        return np.where(self.accident_period <= self.n_acc - self.n_dev, 0.0, r)

    def reserves_by_period(self):
        return _by_period(self.reserve, self.accident_period, self.n_acc)

    def rbns_cl_by_period(self):
        return _by_period(self.rbns_cl_reserve, self.accident_period, self.n_acc)

    @property
    def total_reserve(self):
        return float(self.reserve.sum())

    def predictions_frame(self):
        return pd.DataFrame({
            "claim_id": self.claim_id,
            "accident_period": self.accident_period,
            "prediction": self.prediction,
            "paid_to_date": self.paid_to_date,
            "reserve": self.reserve,
        })

    def reserves_frame(self):
        df = pd.DataFrame({
            "accident_period": np.arange(1, self.n_acc + 1),
            "rbns_cl": self.rbns_cl_by_period(),
            "fnn": self.reserves_by_period(),
        })
        total = pd.DataFrame([{"accident_period": "total", "rbns_cl": df["rbns_cl"].sum(), "fnn": df["fnn"].sum()}])
        return pd.concat([df, total], ignore_index=True)

    def steps_frame(self):
        return pd.DataFrame([
            {
                "dev_period": s.j, "accident_period": s.accident_period,
                "n_learn": s.n_learn, "n_appended": s.n_appended, "n_predicted": s.n_predicted,
                "target_sum": s.target_sum, "fitted_sum": s.fitted_sum,
                "balance_error": s.balance_error,
                "scales": " ".join(repr(float(x)) for x in s.scales),
            }
            for s in self.steps
        ])


def _by_period(values, accident_period, n_acc):
    out = np.zeros(n_acc)
    np.add.at(out, accident_period - 1, values)
    return out


def run_pipeline(portfolio, config=PipelineConfig(), oracle_targets=False):
    """Run the recursion on the time-``I`` view of ``portfolio``.

    With ``oracle_targets`` the appended predictions in each learning set are
    replaced by true ultimates (needs the evaluation square); the networks and
    seeds are otherwise identical, so the two variants form a paired comparison.
    """
    if oracle_targets and not portfolio.evaluation_square:
        raise UnavailableError("oracle targets need the full development square")
    p = portfolio.censored()
    truth = None
    if oracle_targets:
        truth = portfolio.ultimates()[portfolio.reported()]
    n_acc, n_dev = p.n_acc, p.n_dev
    stats = fit_norm_stats(p, use_incurred=config.use_incurred)
    i, T = p.accident_period, p.report_lag

    pred = np.full(len(p), np.nan)
    developed = i <= n_acc - n_dev
    pred[developed] = p.payments[developed, n_dev]
    appended = pred.copy()
    steps, ensembles = [], {}
    for j in range(n_dev - 1, -1, -1):
        target_period = n_acc - j
        ls = build_learning_set(p, j, truth if oracle_targets else appended)
        if len(ls) == 0:
            raise ValidationError(f"lag {j}: empty learning set for accident period {target_period}")
        X = portfolio_features(p, ls.rows, j, stats)
        seeds = member_seeds(config.master_seed, j, config.n_seeds)
        try:
            ens = fit_step(X, ls.targets, config.train, seeds)
        except Exception:
            log.error("fit failed at lag %d (accident period %d)", j, target_period)
            raise
        fitted = ens.predict(X)
        tgt = np.flatnonzero((i == target_period) & (T <= j))
        if len(tgt):
            pred[tgt] = ens.predict(portfolio_features(p, tgt, j, stats))
        appended[tgt] = pred[tgt]
        steps.append(StepReport(
            j=j, accident_period=target_period, n_learn=len(ls),
            n_appended=int(ls.appended.sum()), n_predicted=len(tgt),
            target_sum=float(ls.targets.sum()), fitted_sum=float(fitted.sum()),
            scales=ens.scales.tolist(),
        ))
        ensembles[j] = ens
        log.info("lag %d: learned on %d claims, predicted %d of period %d",
                 j, len(ls), len(tgt), target_period)

    return PipelineResult(
        claim_id=p.claim_id,
        accident_period=i,
        prediction=pred,
        paid_to_date=p.paid_to_date(),
        status_to_date=p.status_to_date(),
        accident_month=p.accident_month,
        rbns_cl=rbns_ptu(p).ultimates,
        steps=steps,
        ensembles=ensembles,
        n_acc=n_acc,
        n_dev=n_dev,
        oracle_targets=oracle_targets,
    )


def run_pipeline_oracle_targets(portfolio, config=PipelineConfig()):
    return run_pipeline(portfolio, config, oracle_targets=True)


def evaluate(result, portfolio):
    """Backtest table by accident period, with a totals row.

    Errors are prediction minus truth; the ``*_ind_rmse`` columns are root mean
    squared per-claim errors of the reported claims in that period.
    """
    if not portfolio.evaluation_square:
        raise UnavailableError("evaluation needs the full development square")
    rep = portfolio.reported()
    truth = pd.Series(portfolio.ultimates()[rep], index=portfolio.claim_id[rep])
    true_ult = truth.reindex(result.claim_id).to_numpy()
    if np.isnan(true_ult).any():
        raise ValidationError("result contains claims absent from the evaluation square")
    n_acc = result.n_acc
    oll_period, _ = true_oll(portfolio)
    cl = result.rbns_cl_by_period()
    fnn = result.reserves_by_period()
    cl_sq = _by_period((result.rbns_cl - true_ult) ** 2, result.accident_period, n_acc)
    fnn_sq = _by_period((result.prediction - true_ult) ** 2, result.accident_period, n_acc)
    counts = np.maximum(1, np.bincount(result.accident_period - 1, minlength=n_acc))
    df = pd.DataFrame({
        "accident_period": np.arange(1, n_acc + 1),
        "true_oll": oll_period,
        "rbns_cl": cl,
        "fnn": fnn,
        "cl_error": cl - oll_period,
        "fnn_error": fnn - oll_period,
        "cl_ind_rmse": np.sqrt(cl_sq / counts),
        "fnn_ind_rmse": np.sqrt(fnn_sq / counts),
    })
    total = {c: df[c].sum() for c in REPORT_COLUMNS[1:6]}
    total.update(accident_period="total", cl_ind_rmse=np.nan, fnn_ind_rmse=np.nan)
    return pd.concat([df, pd.DataFrame([total])], ignore_index=True)[list(REPORT_COLUMNS)]


def individual_rmse(result, portfolio, use="prediction"):
    """Per-claim RMSE over all RBNS claims (accident periods ``> I - J``)."""
    rep = portfolio.reported()
    truth = pd.Series(portfolio.ultimates()[rep], index=portfolio.claim_id[rep])
    true_ult = truth.reindex(result.claim_id).to_numpy()
    sel = result.accident_period > result.n_acc - result.n_dev
    est = getattr(result, use)
    return float(np.sqrt(np.mean((est[sel] - true_ult[sel]) ** 2)))


def with_master_seed(config, seed):
    return replace(config, master_seed=int(seed))

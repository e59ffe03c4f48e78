"""Individual claims: portfolio container, aggregation and RBNS chain-ladder.

A :class:`Portfolio` stores claims column-wise. Per-lag processes (payments,
status, incurred) are ``(n_claims, J + 1)`` float arrays; entries before the
reporting lag, and entries after the time-``I`` diagonal in a censored
portfolio, are NaN.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import (
    CohortExhaustedError,
    DimensionError,
    PositivityError,
    UnavailableError,
    ValidationError,
)
from .triangle import PtuFactors, Triangle

CLAIM_COLUMNS = (
    "claim_id",
    "accident_period",
    "reporting_delay_days",
    "reporting_delay_periods",
    "accident_month",
    "line_flag",
    "dev_period",
    "cumulative_payment",
    "status_open",
)


@dataclass(frozen=True)
class ClaimRecord:
    """One claim; sequences have length ``J + 1`` with NaN where unobserved."""

    claim_id: str
    accident_period: int
    reporting_delay_periods: int
    reporting_delay_days: int
    accident_month: int
    line_flag: int
    payments: np.ndarray
    status: np.ndarray
    incurred: np.ndarray | None = None

    @property
    def case_reserves(self):
        if self.incurred is None:
            return None
        return self.incurred - self.payments


def _ro(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Portfolio:
    """Column-wise collection of claims.

    ``evaluation_square`` marks a portfolio whose claims are observed up to
    lag ``J`` (simulated or backtest data). :meth:`censored` derives the view
    available at time ``I``.
    """

    claim_id: np.ndarray
    accident_period: np.ndarray
    report_lag: np.ndarray
    report_days: np.ndarray
    accident_month: np.ndarray
    line_flag: np.ndarray
    payments: np.ndarray
    status: np.ndarray
    n_acc: int
    n_dev: int
    incurred: np.ndarray | None = None
    evaluation_square: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.claim_id)
        object.__setattr__(self, "claim_id", _ro(self.claim_id, object))
        for name in ("accident_period", "report_lag", "report_days", "accident_month", "line_flag"):
            col = np.asarray(getattr(self, name))
            if col.shape != (n,):
                raise DimensionError(f"{name} has shape {col.shape}, expected ({n},)")
            object.__setattr__(self, name, _ro(col, np.int64))
        width = self.n_dev + 1
        for name in ("payments", "status", "incurred"):
            arr = getattr(self, name)
            if arr is None:
                continue
            arr = np.asarray(arr, dtype=float)
            if arr.shape != (n, width):
                raise DimensionError(f"{name} has shape {arr.shape}, expected ({n}, {width})")
            object.__setattr__(self, name, _ro(arr))
        self._validate()

    # -- validation ------------------------------------------------------------

    def _validate(self):
        n_acc, n_dev = self.n_acc, self.n_dev
        if n_dev < 1 or n_acc <= n_dev:
            raise ValidationError(f"need I > J >= 1, got I={n_acc}, J={n_dev}")
        i, T = self.accident_period, self.report_lag
        if len(set(self.claim_id.tolist())) != len(self.claim_id):
            raise ValidationError("claim ids are not unique")
        if ((i < 1) | (i > n_acc)).any():
            raise ValidationError("accident period outside 1..I")
        if ((T < 0) | (T > n_dev)).any():
            raise ValidationError("reporting delay outside 0..J")
        if ((self.accident_month < 1) | (self.accident_month > 12)).any():
            raise ValidationError("accident month outside 1..12")
        if not np.isin(self.line_flag, (0, 1)).all():
            raise ValidationError("line flag must be 0 or 1")
        if (self.report_days < 0).any():
            raise ValidationError("negative reporting delay in days")
        if not self.evaluation_square and (i + T > n_acc).any():
            raise ValidationError("censored portfolio contains unreported (IBNR) claims")

        expected = self._expected_mask()
        for name in ("payments", "status", "incurred"):
            arr = getattr(self, name)
            if arr is None:
                continue
            finite = np.isfinite(arr)
            if (finite & ~expected).any():
                r, c = np.argwhere(finite & ~expected)[0]
                raise ValidationError(
                    f"{name} of claim {self.claim_id[r]} set at lag {c} outside its "
                    f"observation window (masked before reporting lag {T[r]})"
                )
            if (~finite & expected).any():
                r, c = np.argwhere(~finite & expected)[0]
                raise ValidationError(f"{name} of claim {self.claim_id[r]} missing at lag {c}")
        if (self.payments[expected] < 0).any():
            raise ValidationError("negative cumulative payment")
        if not np.isin(self.status[expected], (0.0, 1.0)).all():
            raise ValidationError("status must be 0 (closed) or 1 (open)")
        if self.incurred is not None and (self.incurred[expected] < 0).any():
            raise ValidationError("negative claims incurred")

    def _expected_mask(self):
        lags = np.arange(self.n_dev + 1)[None, :]
        mask = lags >= self.report_lag[:, None]
        if not self.evaluation_square:
            mask &= lags <= self.horizon()[:, None]
        return mask

    # -- views -----------------------------------------------------------------

    def __len__(self):
        return len(self.claim_id)

    @property
    def has_incurred(self):
        return self.incurred is not None

    def horizon(self):
        """Last lag observed at time ``I``: ``min(J, I - i)`` per claim."""
        return np.minimum(self.n_dev, self.n_acc - self.accident_period)

    def reported(self):
        """Mask of claims reported by time ``I`` (``i + T <= I``)."""
        return self.accident_period + self.report_lag <= self.n_acc

    def paid_to_date(self):
        """Cumulative payment on the time-``I`` diagonal (0 for unreported claims)."""
        h = self.horizon()
        out = self.payments[np.arange(len(self)), h]
        return np.where(self.reported(), np.nan_to_num(out), 0.0)

    def status_to_date(self):
        h = self.horizon()
        return np.nan_to_num(self.status[np.arange(len(self)), h])

    def ultimates(self):
        """True ``C_{i,J|nu}``; requires the evaluation square."""
        if not self.evaluation_square:
            raise UnavailableError("true ultimates need the full development square")
        return self.payments[:, self.n_dev].copy()

    def subset(self, mask):
        idx = np.flatnonzero(mask) if np.asarray(mask).dtype == bool else np.asarray(mask)
        return replace(
            self,
            claim_id=self.claim_id[idx],
            accident_period=self.accident_period[idx],
            report_lag=self.report_lag[idx],
            report_days=self.report_days[idx],
            accident_month=self.accident_month[idx],
            line_flag=self.line_flag[idx],
            payments=self.payments[idx],
            status=self.status[idx],
            incurred=None if self.incurred is None else self.incurred[idx],
        )

    def censored(self):
        """The portfolio as known at time ``I``: IBNR dropped, future lags masked."""
        if not self.evaluation_square:
            return self
        keep = self.reported()
        sub = self.subset(keep)
        lags = np.arange(self.n_dev + 1)[None, :]
        future = lags > sub.horizon()[:, None]

        def cut(a):
            return None if a is None else np.where(future, np.nan, a)

        return replace(
            sub,
            payments=cut(sub.payments),
            status=cut(sub.status),
            incurred=cut(sub.incurred),
            evaluation_square=False,
        )

    def claim(self, k):
        return ClaimRecord(
            claim_id=str(self.claim_id[k]),
            accident_period=int(self.accident_period[k]),
            reporting_delay_periods=int(self.report_lag[k]),
            reporting_delay_days=int(self.report_days[k]),
            accident_month=int(self.accident_month[k]),
            line_flag=int(self.line_flag[k]),
            payments=self.payments[k].copy(),
            status=self.status[k].copy(),
            incurred=None if self.incurred is None else self.incurred[k].copy(),
        )

    def __iter__(self):
        return (self.claim(k) for k in range(len(self)))

    @classmethod
    def from_records(cls, records, n_acc, n_dev, evaluation_square=False, meta=None):
        records = list(records)
        inc = [r.incurred is not None for r in records]
        if any(inc) and not all(inc):
            raise ValidationError("incurred present for some claims only; feature set must be homogeneous")
        width = n_dev + 1

        def seq(values):
            a = np.full(width, np.nan)
            v = np.asarray(values, dtype=float)
            a[: v.size] = v
            return a

        return cls(
            claim_id=np.array([r.claim_id for r in records], dtype=object),
            accident_period=np.array([r.accident_period for r in records], dtype=np.int64),
            report_lag=np.array([r.reporting_delay_periods for r in records], dtype=np.int64),
            report_days=np.array([r.reporting_delay_days for r in records], dtype=np.int64),
            accident_month=np.array([r.accident_month for r in records], dtype=np.int64),
            line_flag=np.array([r.line_flag for r in records], dtype=np.int64),
            payments=np.array([seq(r.payments) for r in records]).reshape(-1, width),
            status=np.array([seq(r.status) for r in records]).reshape(-1, width),
            incurred=np.array([seq(r.incurred) for r in records]).reshape(-1, width) if records and all(inc) else None,
            n_acc=n_acc,
            n_dev=n_dev,
            evaluation_square=evaluation_square,
            meta=dict(meta or {}),
        )


# -- operations ----------------------------------------------------------------


def aggregate(portfolio):
    """Sum reported claims into an aggregate triangle.

    ``C_{i,j} = sum over claims of period i with T <= j of C_{i,j|nu}``.
    With an evaluation square, the full square is attached for backtesting.
    """
    n_acc, n_dev = portfolio.n_acc, portfolio.n_dev
    pay = np.nan_to_num(portfolio.payments)  # NaN before reporting counts as 0
    # correctly rounded cell sums keep the triangle independent of claim order
    full = np.array([
        [math.fsum(col) for col in pay[portfolio.accident_period == i].T]
        for i in range(1, n_acc + 1)
    ]).reshape(n_acc, n_dev + 1)
    lags = np.arange(n_dev + 1)[None, :]
    obs = np.arange(1, n_acc + 1)[:, None] + lags <= n_acc
    cells = full if portfolio.evaluation_square else np.where(obs, full, 0.0)
    check = cells if portfolio.evaluation_square else np.where(obs, cells, 1.0)
    if (check <= 0).any():
        r, c = np.argwhere(check <= 0)[0]
        raise PositivityError(int(r) + 1, int(c), float(cells[r, c]))
    upper = np.where(obs, cells, np.nan)
    return Triangle(upper, cells if portfolio.evaluation_square else None)


def cohort_mask(portfolio, i_max, j):
    return (portfolio.accident_period <= i_max) & (portfolio.report_lag <= j)


def cohort(portfolio, i_max, j):
    """Claims with accident period ``<= i_max`` reported by lag ``j``."""
    if not 0 <= j <= portfolio.n_dev - 1:
        raise ValidationError(f"dev period {j} outside 0..J-1")
    return portfolio.subset(cohort_mask(portfolio, i_max, j))


@dataclass(frozen=True)
class RbnsResult:
    """Reported-claims PtU factors, per-claim ultimates and reserves.

    ``ultimates`` and ``claim_id`` refer to the censored portfolio; fully
    developed claims carry their observed ultimate.
    """

    factors: PtuFactors
    claim_id: np.ndarray
    accident_period: np.ndarray
    ultimates: np.ndarray
    paid_to_date: np.ndarray
    reserves: np.ndarray
    total_reserve: float


def rbns_ptu(portfolio):
    """Projection-to-ultimate recursion restricted to reported claims.

    At each lag ``j`` (from ``J - 1`` down to 0) the factor's numerator and
    denominator run over the identical cohort of claims with reporting delay
    ``<= j`` from accident periods ``<= I - j - 1``; the numerator mixes true
    ultimates and ultimates predicted at earlier steps.
    """
    p = portfolio.censored()
    n_acc, n_dev = p.n_acc, p.n_dev
    i = p.accident_period
    paid = p.paid_to_date()
    # per-claim outstanding (ultimate - paid to date), NaN until predicted
    outstanding = np.full(len(p), np.nan)
    developed = i <= n_acc - n_dev
    outstanding[developed] = 0.0
    G = np.empty(n_dev)
    for j in range(n_dev - 1, -1, -1):
        target_period = n_acc - j
        m = cohort_mask(p, target_period - 1, j)
        if not m.any():
            raise CohortExhaustedError(target_period, j)
        den = math.fsum(p.payments[m, j])
        if not den > 0:
            raise CohortExhaustedError(target_period, j, "zero aggregate payments in denominator")
        num = math.fsum(outstanding[m] + (paid[m] - p.payments[m, j]))
        if not np.isfinite(num):
            raise CohortExhaustedError(target_period, j, "ultimate missing in cohort")
        G[j] = num / den
        tgt = i == target_period
        outstanding[tgt] = p.payments[tgt, j] * G[j]
    ult = paid + outstanding
    reserves = np.zeros(n_acc)
    np.add.at(reserves, i - 1, outstanding)
    return RbnsResult(
        factors=PtuFactors(1.0 + G, G),
        claim_id=p.claim_id,
        accident_period=p.accident_period,
        ultimates=ult,
        paid_to_date=paid,
        reserves=reserves,
        total_reserve=float(reserves.sum()),
    )


def true_oll(portfolio, reported_only=True):
    """True outstanding loss liabilities per accident period and in total.

    ``OLL_i = sum_nu (C_{i,J|nu} - C_{i,I-i|nu})``. With ``reported_only``
    (default) only claims reported by time ``I`` count, matching the RBNS
    reserves; otherwise unreported claims contribute their full ultimate.
    """
    if not portfolio.evaluation_square:
        raise UnavailableError("true OLL needs the full development square")
    oll = portfolio.ultimates() - portfolio.paid_to_date()
    if reported_only:
        oll = np.where(portfolio.reported(), oll, 0.0)
    per = np.zeros(portfolio.n_acc)
    np.add.at(per, portfolio.accident_period - 1, oll)
    return per, float(per.sum())


# -- IO ------------------------------------------------------------------------


def _parse_header(line):
    meta = {}
    for tok in line.lstrip("#").split():
        if "=" in tok:
            k, v = tok.split("=", 1)
            meta[k] = v
    return meta


def read_claims_csv(path, n_acc=None, n_dev=None):
    """Load the long-format claims CSV (one row per claim and dev period).

    An optional first comment line ``# key=value ...`` supplies ``I``, ``J``
    and other metadata; otherwise they are inferred from the data. Rows
    beyond the time-``I`` diagonal mark the file as an evaluation square.
    """
    path = Path(path)
    with open(path) as fh:
        first = fh.readline()
    meta = _parse_header(first) if first.startswith("#") else {}
    df = pd.read_csv(path, comment=None, skiprows=1 if meta or first.startswith("#") else 0,
                     dtype={"claim_id": str}, float_precision="round_trip")
    missing = [c for c in CLAIM_COLUMNS if c not in df.columns]
    if missing:
        raise ValidationError(f"{path}: missing columns {missing}")
    has_inc = "incurred" in df.columns
    if has_inc and df["incurred"].isna().any():
        if df["incurred"].isna().all():
            has_inc = False
        else:
            raise ValidationError(f"{path}: incurred missing for some rows; feature set must be homogeneous")
    if df[list(CLAIM_COLUMNS[1:])].isna().any().any():
        raise ValidationError(f"{path}: empty fields")

    n_acc = int(n_acc or meta.get("I") or df["accident_period"].max())
    n_dev = int(n_dev or meta.get("J") or df["dev_period"].max())
    if ((df["dev_period"] < 0) | (df["dev_period"] > n_dev)).any():
        raise ValidationError(f"{path}: dev period outside 0..{n_dev}")
    is_square = bool((df["accident_period"] + df["dev_period"] > n_acc).any())
    if "evaluation_square" in meta:
        is_square = meta["evaluation_square"] in ("1", "true", "True")

    if df.duplicated(["claim_id", "dev_period"]).any():
        raise ValidationError(f"{path}: duplicate (claim_id, dev_period) rows")
    static_cols = list(CLAIM_COLUMNS[1:6])
    static = df.groupby("claim_id", sort=False)[static_cols]
    if (static.nunique() > 1).any().any():
        raise ValidationError(f"{path}: static claim fields vary across dev periods")
    static = static.first()
    order = static.index.to_numpy()
    pos = pd.Index(order).get_indexer(df["claim_id"])
    width = n_dev + 1

    def spread(col):
        a = np.full((len(order), width), np.nan)
        a[pos, df["dev_period"].to_numpy()] = df[col].to_numpy(dtype=float)
        return a

    try:
        return Portfolio(
            claim_id=order.astype(object),
            accident_period=static["accident_period"].to_numpy(),
            report_lag=static["reporting_delay_periods"].to_numpy(),
            report_days=static["reporting_delay_days"].to_numpy(),
            accident_month=static["accident_month"].to_numpy(),
            line_flag=static["line_flag"].to_numpy(),
            payments=spread("cumulative_payment"),
            status=spread("status_open"),
            incurred=spread("incurred") if has_inc else None,
            n_acc=n_acc,
            n_dev=n_dev,
            evaluation_square=is_square,
            meta=meta,
        )
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from exc


def write_claims_csv(portfolio, path, header=None):
    """Write the long-format claims CSV with a ``# key=value`` header line."""
    p = portfolio
    rows, cols = np.nonzero(np.isfinite(p.payments))
    df = pd.DataFrame({
        "claim_id": p.claim_id[rows],
        "accident_period": p.accident_period[rows],
        "reporting_delay_days": p.report_days[rows],
        "reporting_delay_periods": p.report_lag[rows],
        "accident_month": p.accident_month[rows],
        "line_flag": p.line_flag[rows],
        "dev_period": cols,
        "cumulative_payment": p.payments[rows, cols],
        "status_open": p.status[rows, cols].astype(np.int64),
    })
    if p.incurred is not None:
        df["incurred"] = p.incurred[rows, cols]
    meta = {"I": p.n_acc, "J": p.n_dev, "evaluation_square": int(p.evaluation_square)}
    meta.update(header or {})
    line = "# " + " ".join(f"{k}={v}" for k, v in meta.items()) + "\n"
    with open(path, "w", newline="") as fh:
        fh.write(line)
        df.to_csv(fh, index=False, lineterminator="\n")

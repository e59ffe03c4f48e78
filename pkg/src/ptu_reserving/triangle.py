"""Aggregate run-off triangles: chain-ladder, projection-to-ultimate, Mack.

Accident periods are 1-based (``i = 1..I``) and development periods 0-based
(``j = 0..J``). Internally a triangle is an ``(I, J + 1)`` float array whose
row ``i - 1`` holds accident period ``i``; cells with ``i + j > I`` are NaN.
Every function returning a per-period quantity returns an array of length
``I`` indexed the same way.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError, InsufficientDataError, PositivityError, ValidationError

TRIANGLE_COLUMNS = ("accident_period", "dev_period", "cumulative_payment")


def observed_mask(n_acc, n_dev):
    """Boolean ``(I, J + 1)`` mask of the cells observed at time ``I``."""
    i = np.arange(1, n_acc + 1)[:, None]
    j = np.arange(n_dev + 1)[None, :]
    return i + j <= n_acc


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Triangle:
    """Cumulative payments observed at time ``I``.

    Parameters
    ----------
    values : array_like, shape (I, J + 1)
        Cumulative payments. Entries beyond the last observed diagonal are
        ignored and replaced by NaN.
    square : array_like, shape (I, J + 1), optional
        Fully developed square for backtesting. Its upper part must agree
        with ``values``.
    """

    values: np.ndarray
    square: np.ndarray | None = None

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 2:
            raise ValidationError(f"triangle must be 2-D, got shape {v.shape}")
        n_acc, n_cols = v.shape
        n_dev = n_cols - 1
        if n_dev < 1:
            raise ValidationError("triangle needs at least two development periods (J >= 1)")
        if n_acc <= n_dev:
            raise ValidationError(f"need I > J, got I={n_acc}, J={n_dev}")
        mask = observed_mask(n_acc, n_dev)
        _check_cells(v, mask)
        v[~mask] = np.nan
        object.__setattr__(self, "values", _frozen(v))
        if self.square is not None:
            sq = np.array(self.square, dtype=float)
            if sq.shape != v.shape:
                raise DimensionError(f"square shape {sq.shape} != triangle shape {v.shape}")
            _check_cells(sq, np.ones_like(mask))
            if not np.allclose(sq[mask], v[mask], rtol=1e-12, atol=0.0):
                raise ValidationError("square disagrees with the observed triangle")
            object.__setattr__(self, "square", _frozen(sq))

    @property
    def n_acc(self):
        """Number of accident periods ``I``."""
        return self.values.shape[0]

    @property
    def n_dev(self):
        """Last development period ``J``."""
        return self.values.shape[1] - 1

    def cell(self, i, j):
        return float(self.values[i - 1, j])

    def latest(self):
        """Latest observed diagonal ``C_{i, min(J, I - i)}`` per accident period."""
        n_acc, n_dev = self.n_acc, self.n_dev
        lags = np.minimum(n_dev, n_acc - np.arange(1, n_acc + 1))
        return self.values[np.arange(n_acc), lags]

    def scaled(self, factor):
        sq = None if self.square is None else self.square * factor
        return Triangle(np.nan_to_num(self.values) * factor, sq)

    @classmethod
    def from_cells(cls, cells):
        """Build from a mapping ``{(i, j): cumulative_payment}``.

        Cells below the diagonal (``i + j > I``) are collected into the
        evaluation square, which then has to be complete.
        """
        if not cells:
            raise ValidationError("no triangle cells given")
        n_acc = max(i for i, _ in cells)
        n_dev = max(j for _, j in cells)
        if min(i for i, _ in cells) < 1 or min(j for _, j in cells) < 0:
            raise ValidationError("accident periods start at 1, dev periods at 0")
        full = np.full((n_acc, n_dev + 1), np.nan)
        for (i, j), c in cells.items():
            full[i - 1, j] = c
        mask = observed_mask(n_acc, n_dev)
        has_lower = np.isfinite(full[~mask]).any()
        square = None
        if has_lower:
            if not np.isfinite(full).all():
                missing = [(int(r) + 1, int(c)) for r, c in np.argwhere(~np.isfinite(full))]
                raise ValidationError(f"partial evaluation square, missing cells {missing[:5]}")
            square = full
        return cls(np.where(mask, full, np.nan), square)

    def to_cells(self, include_square=False):
        arr = self.square if include_square and self.square is not None else self.values
        return {
            (r + 1, c): float(arr[r, c])
            for r, c in zip(*np.nonzero(np.isfinite(arr)))
        }


def _check_cells(values, mask):
    obs = values[mask]
    bad = ~np.isfinite(obs)
    if bad.any():
        r, c = np.argwhere(mask)[np.argmax(bad)]
        raise ValidationError(f"missing cell (i={r + 1}, j={c}): trapezoid incomplete")
    nonpos = obs <= 0
    if nonpos.any():
        r, c = np.argwhere(mask)[np.argmax(nonpos)]
        raise PositivityError(int(r) + 1, int(c), float(values[r, c]))


def _frozen_factors(values, n_dev, kind):
    v = np.array(values, dtype=float).ravel()
    if v.shape != (n_dev,):
        raise DimensionError(f"{kind} needs {n_dev} entries, got {v.size}")
    if not (np.isfinite(v).all() and (v > 0).all()):
        raise ValidationError(f"{kind} must be finite and positive: {v}")
    v.setflags(write=False)
    return v


@dataclass(frozen=True)
class DevFactors:
    """One-period chain-ladder factors ``f_j``, ``j = 0..J-1``."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        object.__setattr__(self, "values", _frozen_factors(v, v.size, "DevFactors"))

    def __len__(self):
        return self.values.size

    def cumulative(self):
        """Products ``prod_{l >= j} f_l``; the PtU factors implied by these factors."""
        return np.cumprod(self.values[::-1])[::-1]


@dataclass(frozen=True)
class PtuFactors:
    """Projection-to-ultimate factors ``F_j``, ``j = 0..J-1``.

    ``excess`` holds ``F_j - 1``. Estimators fill it from payment differences
    so that reserves ``C * (F - 1)`` keep full relative precision even when
    ``F_j`` is very close to one.
    """

    values: np.ndarray
    excess: np.ndarray | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        object.__setattr__(self, "values", _frozen_factors(v, v.size, "PtuFactors"))
        e = v - 1.0 if self.excess is None else np.asarray(self.excess, dtype=float).ravel()
        if e.shape != v.shape or not np.isfinite(e).all():
            raise DimensionError("PtuFactors: excess must be finite and match the factors")
        object.__setattr__(self, "excess", _frozen(e))

    def __len__(self):
        return self.values.size


@dataclass(frozen=True)
class MackEstimates:
    """Variance parameters and mean squared errors of prediction.

    ``msep_by_period`` has length ``I``; fully developed periods carry 0.
    """

    sigma2: np.ndarray
    msep_by_period: np.ndarray
    msep_total: float

    @property
    def rmsep_by_period(self):
        return np.sqrt(self.msep_by_period)

    @property
    def rmsep_total(self):
        return float(np.sqrt(self.msep_total))


def estimate_cl_factors(tri):
    """Volume-weighted chain-ladder factors.

    ``f_j = sum_{i <= I-j-1} C_{i,j+1} / sum_{i <= I-j-1} C_{i,j}``.
    """
    C = tri.values
    f = np.empty(tri.n_dev)
    for j in range(tri.n_dev):
        n = tri.n_acc - j - 1
        f[j] = C[:n, j + 1].sum() / C[:n, j].sum()
    return DevFactors(f)


def cl_forecast(tri, factors):
    """Roll the latest diagonal forward with one-period factors.

    Returns the predicted ultimate ``C_{i,J}`` per accident period; fully
    developed periods return their observed ultimate unchanged.
    """
    f = np.asarray(getattr(factors, "values", factors), dtype=float)
    if f.size != tri.n_dev:
        raise DimensionError(f"expected {tri.n_dev} factors, got {f.size}")
    n_acc, n_dev = tri.n_acc, tri.n_dev
    ult = np.empty(n_acc)
    for r in range(n_acc):
        lag = min(n_dev, n_acc - (r + 1))
        c = tri.values[r, lag]
        for l in range(lag, n_dev):
            c = c * f[l]
        ult[r] = c
    return ult


def estimate_ptu(tri):
    """Backward (grossing-up) recursion for the projection-to-ultimate factors.

    Starts from the fully developed periods, estimates ``F_{J-1}``, predicts the
    ultimate of period ``I-J+1`` in one shot, appends it, and continues down to
    ``j = 0``.

    Returns
    -------
    (PtuFactors, numpy.ndarray)
        The factors and the ultimate (observed or predicted) per accident period.
    """
    C = tri.values
    n_acc, n_dev = tri.n_acc, tri.n_dev
    latest = tri.latest()
    # outstanding = ultimate - latest; the recursion runs on these differences
    outstanding = np.full(n_acc, np.nan)
    outstanding[: n_acc - n_dev] = 0.0
    G = np.empty(n_dev)
    for j in range(n_dev - 1, -1, -1):
        n = n_acc - j - 1
        G[j] = math.fsum(outstanding[:n] + (latest[:n] - C[:n, j])) / math.fsum(C[:n, j])
        outstanding[n] = C[n, j] * G[j]
    return PtuFactors(1.0 + G, G), latest + outstanding


def verify_grossing_up(tri):
    """Largest relative gap between the backward and forward chain-ladder paths.

    Covers both the ultimates and the identity ``F_j = prod_{l >= j} f_l``.
    """
    f = estimate_cl_factors(tri)
    F, ult_ptu = estimate_ptu(tri)
    ult_cl = cl_forecast(tri, f)
    d_ult = np.max(np.abs(ult_ptu - ult_cl) / np.abs(ult_cl))
    prod = f.cumulative()
    d_fac = np.max(np.abs(F.values - prod) / prod)
    return float(max(d_ult, d_fac))


def cl_reserves(tri, ultimates, factors=None):
    """Reserves ``ultimate - latest diagonal`` per period and their total.

    With PtU ``factors`` the reserves are taken as ``latest * (F - 1)``
    instead, which avoids cancellation when a reserve is tiny compared with
    the payments to date.
    """
    ult = np.asarray(ultimates, dtype=float)
    if ult.shape != (tri.n_acc,):
        raise DimensionError(f"expected {tri.n_acc} ultimates, got shape {ult.shape}")
    if factors is None:
        res = ult - tri.latest()
    else:
        if len(factors) != tri.n_dev:
            raise DimensionError(f"expected {tri.n_dev} factors, got {len(factors)}")
        lag = np.minimum(tri.n_dev, tri.n_acc - np.arange(1, tri.n_acc + 1))
        excess = np.append(factors.excess, 0.0)
        res = tri.latest() * excess[lag]
    res[: tri.n_acc - tri.n_dev] = 0.0
    return res, float(res.sum())


def estimate_sigma2(tri, factors=None):
    """Mack variance parameters ``sigma^2_j``.

    Uses the weighted squared deviations of the individual link ratios where
    at least two rows contribute, and the usual extrapolation for the last
    period of a triangle (``I = J + 1``).
    """
    C = tri.values
    n_acc, n_dev = tri.n_acc, tri.n_dev
    f = (factors or estimate_cl_factors(tri)).values
    s2 = np.full(n_dev, np.nan)
    for j in range(n_dev):
        n = n_acc - j - 1
        if n < 2:
            continue
        ratios = C[:n, j + 1] / C[:n, j]
        s2[j] = (C[:n, j] * (ratios - f[j]) ** 2).sum() / (n - 1)
    if np.isnan(s2).all():
        raise InsufficientDataError(
            "insufficient data for uncertainty: no variance parameter is estimable"
        )
    last = n_dev - 1
    if np.isnan(s2[last]):
        if n_dev >= 3:
            a, b = s2[last - 1], s2[last - 2]
            ratio = a * a / b if b > 0 else 0.0
            s2[last] = min(ratio, b, a)
        else:
            s2[last] = s2[last - 1]
    return s2


def mack_uncertainty(tri):
    """Mack's conditional MSEP per accident period and for the total reserve."""
    if tri.n_acc < 3:
        raise InsufficientDataError("insufficient data for uncertainty: need I >= 3")
    C = tri.values
    n_acc, n_dev = tri.n_acc, tri.n_dev
    fac = estimate_cl_factors(tri)
    f = fac.values
    s2 = estimate_sigma2(tri, fac)
    ult = cl_forecast(tri, fac)
    col_sums = np.array([C[: n_acc - k - 1, k].sum() for k in range(n_dev)])
    w = s2 / f**2

    msep = np.zeros(n_acc)
    for r in range(n_acc - n_dev, n_acc):
        lag = n_acc - (r + 1)
        proj = C[r, lag]
        acc = 0.0
        for k in range(lag, n_dev):
            acc += w[k] * (1.0 / proj + 1.0 / col_sums[k])
            proj *= f[k]
        msep[r] = ult[r] ** 2 * acc

    total = msep.sum()
    open_rows = range(n_acc - n_dev, n_acc)
    for r in open_rows:
        lag = n_acc - (r + 1)
        est = sum(w[k] / col_sums[k] for k in range(lag, n_dev))
        for q in open_rows:
            if q > r:
                total += 2.0 * ult[r] * ult[q] * est
    return MackEstimates(_frozen(s2), _frozen(msep), float(total))


# -- IO ------------------------------------------------------------------------


def read_triangle_csv(path):
    """Load a long-format triangle CSV (``accident_period,dev_period,cumulative_payment``)."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(line for line in fh if not line.startswith("#"))]
    if not rows or tuple(h.strip() for h in rows[0]) != TRIANGLE_COLUMNS:
        raise ValidationError(f"{path}: header must be {','.join(TRIANGLE_COLUMNS)}")
    cells = {}
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        try:
            i, j, c = int(row[0]), int(row[1]), float(row[2])
        except (ValueError, IndexError) as exc:
            raise ValidationError(f"{path}:{lineno}: malformed row {row}") from exc
        if (i, j) in cells:
            raise ValidationError(f"{path}:{lineno}: duplicate cell ({i}, {j})")
        cells[(i, j)] = c
    return Triangle.from_cells(cells)


def write_triangle_csv(tri, path, include_square=False):
    cells = tri.to_cells(include_square=include_square)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRIANGLE_COLUMNS)
        for (i, j), c in sorted(cells.items()):
            w.writerow([i, j, repr(c)])


def cl_summary(tri, method="ptu"):
    """Factors, ultimates, reserves and Mack RMSEP as plain serializable dicts."""
    f = estimate_cl_factors(tri)
    if method == "ptu":
        F, ult = estimate_ptu(tri)
    elif method == "forward":
        ult = cl_forecast(tri, f)
        F = PtuFactors(f.cumulative())
    else:
        raise ValidationError(f"unknown method {method!r}")
    res, total = cl_reserves(tri, ult, F if method == "ptu" else None)
    try:
        mack = mack_uncertainty(tri)
    except InsufficientDataError:
        mack = None
    return {
        "method": method,
        "factors": [
            {
                "dev_period": j,
                "cl_factor": float(f.values[j]),
                "ptu_factor": float(F.values[j]),
                "sigma2": None if mack is None else float(mack.sigma2[j]),
            }
            for j in range(tri.n_dev)
        ],
        "periods": [
            {
                "accident_period": r + 1,
                "latest": float(tri.latest()[r]),
                "ultimate": float(ult[r]),
                "reserve": float(res[r]),
                "rmsep": None if mack is None else float(mack.rmsep_by_period[r]),
            }
            for r in range(tri.n_acc)
        ],
        "total_reserve": total,
        "total_rmsep": None if mack is None else mack.rmsep_total,
    }


def write_summary(summary, out_dir):
    """Write the ``cl_summary`` dict as CSV files plus a JSON mirror."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_rows(out / "factors.csv", ("dev_period", "cl_factor", "ptu_factor"), summary["factors"])
    periods = summary["periods"]
    _write_rows(out / "ultimates.csv", ("accident_period", "ultimate", "reserve"), periods)
    if summary["total_rmsep"] is not None:
        rows = [dict(p) for p in periods] + [
            {"accident_period": "total", "reserve": summary["total_reserve"],
             "rmsep": summary["total_rmsep"]}
        ]
        _write_rows(out / "mack.csv", ("accident_period", "reserve", "rmsep"), rows)
        _write_rows(out / "sigma2.csv", ("dev_period", "sigma2"), summary["factors"])
    (out / "cl.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else str(v)


def _write_rows(path, columns, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(row.get(c)) for c in columns])
    Path(path).write_text(buf.getvalue())

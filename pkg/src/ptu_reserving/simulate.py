"""Seeded synthetic individual-claims squares.

Each claim is reported ``T`` periods after its accident period, starts with a
lognormal payment at lag ``T`` and then develops multiplicatively::

    C_{j+1} = C_j * g_j * eps_j,   E[eps_j] = 1

while it is *active* during ``(j, j+1]``. Without the status effect every
claim is active at every lag, so individual claims (and hence the aggregate
of a fixed cohort) satisfy the chain-ladder mean assumption with factors
``g_j``. With the status effect, only claims open at ``j`` or re-opened at
``j + 1`` develop; closed claims stay flat. The status chain is always
simulated: a claim is open at reporting with ``open_prob``, an open claim
closes during ``(j, j+1]`` with ``close_probs[j]`` and a closed one re-opens
with ``reopen_prob``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace

import numpy as np

from .claims import Portfolio
from .errors import ValidationError

DAYS_PER_PERIOD = 365
_MONTH_START = np.cumsum([0, 31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30])


@dataclass(frozen=True)
class SimConfig:
    n_acc: int = 5
    n_dev: int = 4
    claims_per_period: float = 4000.0
    reporting_probs: tuple = (0.7, 0.2, 0.06, 0.03, 0.01)
    severity_scale: float = 1000.0
    severity_dispersion: float = 1.0
    dev_factors: tuple = (1.8, 1.25, 1.1, 1.05)
    dev_noise: float = 0.25
    open_prob: float = 0.7
    close_probs: tuple = (0.4, 0.5, 0.6, 0.7)
    reopen_prob: float = 0.05
    zero_claim_prob: float = 0.0
    status_effect: bool = False
    line_effect: float = 0.0
    month_effect: float = 0.0
    include_incurred: bool = False
    incurred_noise: float = 0.5
    seed: int = 0

    def __post_init__(self):
        for name in ("reporting_probs", "dev_factors", "close_probs"):
            object.__setattr__(self, name, tuple(float(x) for x in getattr(self, name)))
        J = self.n_dev
        if not (J >= 1 and self.n_acc > J):
            raise ValidationError(f"need I > J >= 1, got I={self.n_acc}, J={J}")
        p = np.asarray(self.reporting_probs)
        if p.shape != (J + 1,) or (p < 0).any() or abs(p.sum() - 1.0) > 1e-9:
            raise ValidationError(f"reporting_probs must be {J + 1} probabilities summing to 1, got {self.reporting_probs}")
        if len(self.dev_factors) != J or min(self.dev_factors) <= 0:
            raise ValidationError(f"dev_factors must be {J} positive numbers")
        if len(self.close_probs) != J or not all(0 <= q <= 1 for q in self.close_probs):
            raise ValidationError(f"close_probs must be {J} probabilities")
        for name in ("open_prob", "reopen_prob", "zero_claim_prob"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValidationError(f"{name} must lie in [0, 1]")
        if not (self.claims_per_period > 0 and self.severity_scale > 0):
            raise ValidationError("claims_per_period and severity_scale must be positive")
        if self.severity_dispersion < 0 or self.dev_noise < 0 or self.incurred_noise < 0:
            raise ValidationError("dispersion and noise levels must be non-negative")
        if self.line_effect <= -1:
            raise ValidationError("line_effect must exceed -1")
        if abs(self.month_effect) >= 1:
            raise ValidationError("month_effect must lie in (-1, 1)")

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValidationError(f"unknown simulation settings {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self):
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def informative(cls, **overrides):
        """Status-driven development: open claims grow, closed claims stay flat."""
        base = dict(
            status_effect=True,
            dev_factors=(2.6, 1.6, 1.3, 1.2),
            open_prob=0.6,
            close_probs=(0.45, 0.5, 0.6, 0.7),
            reopen_prob=0.05,
            severity_dispersion=0.6,
            dev_noise=0.15,
        )
        base.update(overrides)
        return cls(**base)


def _effective_factors(config, line, month):
    """Per-claim active development factors, shape ``(n, J)``."""
    g = np.asarray(config.dev_factors)[None, :].repeat(len(line), axis=0)
    if config.month_effect:
        g[:, 0] *= 1.0 + config.month_effect * (np.asarray(month) - 6.5) / 5.5
    if config.line_effect:
        g = 1.0 + (g - 1.0) * (1.0 + config.line_effect * np.asarray(line))[:, None]
    return g


def simulate(config):
    """Draw a full development square; returns a portfolio with ``evaluation_square``."""
    rng = np.random.default_rng(config.seed)
    I, J = config.n_acc, config.n_dev
    counts = rng.poisson(config.claims_per_period, size=I)
    acc = np.repeat(np.arange(1, I + 1), counts)
    n = acc.size
    month = rng.integers(1, 13, size=n)
    line = rng.integers(0, 2, size=n)
    T = rng.choice(J + 1, size=n, p=np.asarray(config.reporting_probs))
    month_len = np.diff(np.append(_MONTH_START, 365))
    doy = _MONTH_START[month - 1] + np.floor(rng.random(n) * month_len[month - 1]).astype(np.int64)
    # delay in days consistent with the period delay: floor((doy + d) / 365) == T
    lo = np.maximum(0, DAYS_PER_PERIOD * T - doy)
    hi = DAYS_PER_PERIOD * (T + 1) - doy
    days = lo + np.floor(rng.random(n) * (hi - lo)).astype(np.int64)

    sd = config.severity_dispersion
    first = config.severity_scale * np.exp(sd * rng.standard_normal(n) - 0.5 * sd * sd)
    first = np.where(rng.random(n) < config.zero_claim_prob, 0.0, first)
    g = _effective_factors(config, line, month)
    eps_sd = config.dev_noise
    eps = np.exp(eps_sd * rng.standard_normal((n, J)) - 0.5 * eps_sd * eps_sd)
    u_close = rng.random((n, J))
    u_open = rng.random(n)

    pay = np.full((n, J + 1), np.nan)
    status = np.full((n, J + 1), np.nan)
    c = np.zeros(n)
    s = np.zeros(n)
    for j in range(J + 1):
        start = T == j
        c = np.where(start, first, c)
        s = np.where(start, (u_open < config.open_prob).astype(float), s)
        live = T <= j
        pay[live, j] = c[live]
        status[live, j] = s[live]
        if j == J:
            break
        # transition (j, j+1]: next status first, then the payment increment
        q = config.close_probs[j]
        nxt = np.where(s == 1.0, (u_close[:, j] >= q).astype(float),
                       (u_close[:, j] < config.reopen_prob).astype(float))
        active = (s == 1.0) | (nxt == 1.0) if config.status_effect else np.ones(n, bool)
        grow = np.where(active, g[:, j] * eps[:, j], 1.0)
        c = np.where(live, c * grow, c)
        s = np.where(live, nxt, s)

    incurred = None
    if config.include_incurred:
        ult = pay[:, J]
        lags = np.arange(J + 1)[None, :]
        noise_sd = config.incurred_noise * (J - lags) / J
        z = rng.standard_normal((n, J + 1))
        incurred = ult[:, None] * np.exp(noise_sd * z - 0.5 * noise_sd**2)
        incurred = np.where(np.isfinite(pay), incurred, np.nan)

    width = len(str(max(n, 1)))
    ids = np.array([f"C{k:0{width}d}" for k in range(n)], dtype=object)
    return Portfolio(
        claim_id=ids,
        accident_period=acc,
        report_lag=T,
        report_days=days,
        accident_month=month,
        line_flag=line,
        payments=pay,
        status=status,
        incurred=incurred,
        n_acc=I,
        n_dev=J,
        evaluation_square=True,
        meta={"seed": config.seed},
    )


def conditional_multipliers(config, line=0, month=6):
    """``E[C_J / C_j | status at j]`` implied by the generator.

    Returns an array of shape ``(J + 1, 2)``; column 0 is for claims closed at
    lag ``j``, column 1 for open claims. Covariate effects are evaluated at
    the given ``line`` and ``month``.
    """
    J = config.n_dev
    g = _effective_factors(config, np.array([line]), np.array([month]))[0]
    m = np.ones((J + 1, 2))
    for j in range(J - 1, -1, -1):
        if not config.status_effect:
            m[j] = g[j] * m[j + 1]
            continue
        q, rho = config.close_probs[j], config.reopen_prob
        m[j, 1] = g[j] * ((1 - q) * m[j + 1, 1] + q * m[j + 1, 0])
        m[j, 0] = rho * g[j] * m[j + 1, 1] + (1 - rho) * m[j + 1, 0]
    return m


def expected_ultimates(config, portfolio):
    """Closed-form ``E[C_J | state at time I]`` per claim; NaN for unreported claims."""
    p = portfolio
    lag = p.horizon()
    rows = np.arange(len(p))
    out = np.full(len(p), np.nan)
    rep = p.reported()
    for line in (0, 1):
        for month in range(1, 13):
            sel = rep & (p.line_flag == line) & (p.accident_month == month)
            if not sel.any():
                continue
            m = conditional_multipliers(config, line, month)
            st = p.status[rows[sel], lag[sel]].astype(int)
            out[sel] = p.payments[rows[sel], lag[sel]] * m[lag[sel], st]
    return out


def informative_scenario(config):
    """Simulate a square and its per-claim conditional-mean ultimates.

    Meant for configs with the status effect on; with it off the portfolio is
    exactly :func:`simulate` and the oracle is plain chain-ladder development.
    Returns ``(portfolio, oracle)``; ``oracle`` is NaN for claims not reported
    by time ``I``.
    """
    portfolio = simulate(config)
    return portfolio, expected_ultimates(config, portfolio)


def expected_cl_factors(config):
    """Aggregate chain-ladder factors implied by the generator (no covariate effects).

    Mixes per-claim development with late reporting: the expected aggregate at
    lag ``j`` is proportional to ``sum_{t <= j} p_t prod_{t <= l < j} f_l``
    where ``f_l`` is the cohort-level factor ``m_l / m_{l+1}``.
    """
    if config.line_effect or config.month_effect:
        raise ValidationError("closed form assumes no line or month effects")
    J = config.n_dev
    p = np.asarray(config.reporting_probs)
    # mean development per period for a claim reported at lag t
    if config.status_effect:
        # track E[C_j] split by status for a claim reported at lag t
        level = np.zeros(J + 1)
        for t in range(J + 1):
            open_mass = np.array([1 - config.open_prob, config.open_prob])
            for j in range(t, J + 1):
                level[j] += p[t] * open_mass.sum()
                if j == J:
                    break
                q, rho, gj = config.close_probs[j], config.reopen_prob, config.dev_factors[j]
                # open_mass holds E[C_j 1{status}] per unit first payment
                c_closed, c_open = open_mass
                new_open = gj * (c_open * (1 - q) + c_closed * rho)
                new_closed = gj * c_open * q + c_closed * (1 - rho)
                open_mass = np.array([new_closed, new_open])
    else:
        g = np.asarray(config.dev_factors)
        level = np.array([
            sum(p[t] * np.prod(g[t:j]) for t in range(j + 1)) for j in range(J + 1)
        ])
    return level[1:] / level[:-1]


def save_config(config, path):
    with open(path, "w") as fh:
        json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def with_seed(config, seed):
    return replace(config, seed=int(seed))

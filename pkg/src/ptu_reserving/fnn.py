"""Feed-forward regression networks for one-shot ultimate prediction.

Features are the Markov-reduced claim state at lag ``j``::

    [payment, status, line, month, delay]                      (5 inputs)
    [payment, status, line, month, delay, incurred, reserve]   (7 inputs)

All of it is plain numpy: the network is small (606 or 646 weights) and the
gradients are written out by hand so they can be checked against finite
differences.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import DegenerateFeatureError, DimensionError, DivergenceError, ValidationError

log = logging.getLogger(__name__)

HIDDEN = (20, 15, 10)
DELAY_CENSOR_DAYS = 365


@dataclass(frozen=True)
class NormStats:
    """Standardization constants, fitted once per run on all observed cells.

    Payments and incurred are standardized on the ``log(max(1, x))`` scale,
    case reserves on the raw scale. Standard deviations use ``ddof=0``.
    """

    pay_mean: float
    pay_sd: float
    inc_mean: float | None = None
    inc_sd: float | None = None
    res_mean: float | None = None
    res_sd: float | None = None

    @property
    def has_incurred(self):
        return self.inc_mean is not None


def _mean_sd(x, name):
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        raise DegenerateFeatureError(f"{name}: need at least two observations")
    m = float(x.mean())
    s = float(x.std())
    if not s > 0:
        raise DegenerateFeatureError(f"{name}: zero variance, cannot standardize")
    return m, s


def log_clamp(x):
    return np.log(np.maximum(1.0, x))


def fit_norm_stats(portfolio, use_incurred=None):
    """Fit :class:`NormStats` over every observed cell of the censored portfolio."""
    p = portfolio.censored()
    if use_incurred is None:
        use_incurred = p.has_incurred
    if use_incurred and not p.has_incurred:
        raise DimensionError("incurred features requested but the portfolio has no incurred data")
    obs = np.isfinite(p.payments)
    pm, ps = _mean_sd(log_clamp(p.payments[obs]), "payments")
    if not use_incurred:
        return NormStats(pm, ps)
    im, is_ = _mean_sd(log_clamp(p.incurred[obs]), "incurred")
    rm, rs = _mean_sd(p.incurred[obs] - p.payments[obs], "case reserves")
    return NormStats(pm, ps, im, is_, rm, rs)


def month_feature(month):
    return (np.asarray(month, dtype=float) - 1.0) / 11.0


def delay_feature(days):
    d = np.minimum(np.asarray(days, dtype=float), DELAY_CENSOR_DAYS)
    return np.log1p(d) / math.log1p(DELAY_CENSOR_DAYS)


def featurize(payment, status, line, month, delay_days, stats, incurred=None):
    """Feature matrix for claim states at one lag (vectorized over claims).

    Returns an ``(n, 5)`` array, or ``(n, 7)`` when ``stats`` carries incurred
    statistics, in which case ``incurred`` is required.
    """
    payment = np.atleast_1d(np.asarray(payment, dtype=float))
    cols = [
        (log_clamp(payment) - stats.pay_mean) / stats.pay_sd,
        np.asarray(status, dtype=float),
        np.asarray(line, dtype=float),
        month_feature(month),
        delay_feature(delay_days),
    ]
    if stats.has_incurred:
        if incurred is None:
            raise DimensionError("feature set expects incurred, but none supplied")
        incurred = np.asarray(incurred, dtype=float)
        cols.append((log_clamp(incurred) - stats.inc_mean) / stats.inc_sd)
        cols.append((incurred - payment - stats.res_mean) / stats.res_sd)
    elif incurred is not None:
        raise DimensionError("incurred supplied but statistics were fitted without it")
    X = np.column_stack([np.broadcast_to(c, payment.shape) for c in cols])
    if not np.isfinite(X).all():
        raise ValidationError("non-finite feature values")
    return X


def portfolio_features(portfolio, rows, j, stats):
    """Markov features of the given claims at lag ``j``."""
    p = portfolio
    inc = p.incurred[rows, j] if stats.has_incurred else None
    return featurize(
        p.payments[rows, j], p.status[rows, j], p.line_flag[rows],
        p.accident_month[rows], p.report_days[rows], stats, inc,
    )


# -- network -------------------------------------------------------------------


@dataclass
class FnnModel:
    """Dense tanh network with a single exponential output unit."""

    weights: list
    biases: list

    @classmethod
    def init(cls, input_dim, hidden=HIDDEN, rng=None):
        """Uniform ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]`` weights, zero biases."""
        rng = np.random.default_rng(rng)
        sizes = (input_dim, *hidden, 1)
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            lim = 1.0 / math.sqrt(fan_in)
            weights.append(rng.uniform(-lim, lim, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases)

    @property
    def input_dim(self):
        return self.weights[0].shape[0]

    @property
    def layer_sizes(self):
        return (self.input_dim, *(w.shape[1] for w in self.weights))

    @property
    def n_params(self):
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def params(self):
        return [a for pair in zip(self.weights, self.biases) for a in pair]

    def copy(self):
        return FnnModel([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def _check(self, X):
        X = np.asarray(X, dtype=self.weights[0].dtype)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.input_dim:
            raise DimensionError(f"model expects {self.input_dim} inputs, got {X.shape[1]}")
        return X

    def forward(self, X):
        X = self._check(X)
        h = X
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.tanh(h @ w + b)
        return np.exp(h @ self.weights[-1] + self.biases[-1]).ravel()

    __call__ = forward

    def loss_and_grad(self, X, y, penalty=None):
        """Mean squared error and its gradient w.r.t. every parameter.

        ``penalty``, if given, maps the network outputs to ``(value, d value /
        d outputs)`` and is added to the loss. Gradients are returned in the
        order of :meth:`params`.
        """
        X = self._check(X)
        acts = [X]
        h = X
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.tanh(h @ w + b)
            acts.append(h)
        out = np.exp(h @ self.weights[-1] + self.biases[-1]).ravel()
        resid = out - y
        loss = float(np.mean(resid * resid))
        dout = (2.0 / len(y)) * resid
        if penalty is not None:
            extra, dextra = penalty(out)
            loss += float(extra)
            dout = dout + dextra
        # d loss / d pre-activation of the exp unit
        delta = (dout * out)[:, None]
        n_layers = len(self.weights)
        gw, gb = [None] * n_layers, [None] * n_layers
        for k in range(n_layers - 1, -1, -1):
            gw[k] = acts[k].T @ delta
            gb[k] = delta.sum(axis=0)
            if k:
                delta = (delta @ self.weights[k].T) * (1.0 - acts[k] * acts[k])
        return loss, [g for pair in zip(gw, gb) for g in pair]

    def astype(self, dtype):
        return FnnModel([w.astype(dtype) for w in self.weights], [b.astype(dtype) for b in self.biases])

    def to_dict(self):
        return {
            "layer_sizes": list(self.layer_sizes),
            "activations": ["tanh"] * (len(self.weights) - 1) + ["exp"],
            "weights": [w.astype(float).ravel().tolist() for w in self.weights],
            "biases": [b.astype(float).tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, d):
        sizes = d["layer_sizes"]
        weights = [
            np.asarray(w, dtype=float).reshape(a, b)
            for w, a, b in zip(d["weights"], sizes[:-1], sizes[1:])
        ]
        return cls(weights, [np.asarray(b, dtype=float) for b in d["biases"]])


# -- training ------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 4096
    max_epochs: int = 1000
    val_fraction: float = 0.1
    plateau_factor: float = 0.9
    plateau_patience: int = 5
    min_delta: float = 1e-6
    min_lr: float = 1e-6
    stop_patience: int = 50
    hidden: tuple = HIDDEN
    dtype: str = "float64"
    seed: int = 0

    def __post_init__(self):
        if not (self.lr > 0 and self.batch_size > 0 and self.max_epochs > 0):
            raise ValidationError("learning rate, batch size and epochs must be positive")
        if not 0 <= self.val_fraction < 1:
            raise ValidationError("validation fraction must lie in [0, 1)")
        if not 0 < self.plateau_factor < 1:
            raise ValidationError("plateau factor must lie in (0, 1)")
        if self.plateau_patience < 1 or self.stop_patience < 1:
            raise ValidationError("patience values must be positive")
        if self.dtype not in ("float32", "float64"):
            raise ValidationError(f"unsupported dtype {self.dtype!r}")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    @classmethod
    def from_dict(cls, d):
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


@dataclass
class TrainHistory:
    val_loss: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    best_epoch: int = -1
    stop_reason: str = ""

    @property
    def epochs(self):
        return len(self.val_loss)


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def split_indices(n, val_fraction, rng):
    """Seeded random learning/validation split of ``n`` rows (one row per claim)."""
    perm = rng.permutation(n)
    n_val = int(round(n * val_fraction))
    if n - n_val < 1:
        n_val = 0
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def train(X, y, config=TrainConfig(), return_history=False, penalty=None):
    """Fit one network by mini-batch Adam on the MSE loss.

    The learning rate is multiplied by ``plateau_factor`` whenever the
    validation loss has not improved (by more than ``min_delta`` relative) for
    ``plateau_patience`` epochs. Training stops after ``max_epochs``, after
    ``stop_patience`` epochs without improvement, or once the learning rate
    drops below ``min_lr``; the best validation snapshot is returned.

    The output bias starts at ``log(mean(y))`` so the untrained network already
    predicts the portfolio mean.

    ``penalty(rows, out)`` is an optional regularization hook, called per
    mini-batch with the learning-row indices and network outputs; it returns
    ``(value, d value / d out)``. The same penalty, evaluated on the
    validation rows, enters the loss used for snapshot selection.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or len(X) != len(y) or len(y) == 0:
        raise DimensionError(f"bad learning set shapes X={X.shape}, y={y.shape}")
    if (y < 0).any() or not np.isfinite(y).all():
        raise ValidationError("targets must be finite and non-negative")
    dtype = np.dtype(config.dtype)
    rng = np.random.default_rng(config.seed)
    tr, va = split_indices(len(y), config.val_fraction, rng)
    if len(va) == 0:
        va = tr
    Xtr, ytr = X[tr].astype(dtype), y[tr].astype(dtype)
    Xva, yva = X[va].astype(dtype), y[va]

    model = FnnModel.init(X.shape[1], config.hidden, rng).astype(dtype)
    mean_y = float(ytr.mean())
    if mean_y > 0:
        model.biases[-1][:] = math.log(mean_y)
    params = model.params()
    opt = Adam(params, config.lr)

    def val_mse():
        out = model.forward(Xva).astype(float)
        r = out - yva
        loss = float(np.mean(r * r))
        if penalty is not None:
            loss += float(penalty(va, out)[0])
        return loss

    hist = TrainHistory()
    best = val_mse()
    best_model = model.copy()
    since_best = 0
    since_plateau = 0
    n_tr = len(ytr)
    bs = config.batch_size
    for epoch in range(config.max_epochs):
        order = rng.permutation(n_tr)
        for start in range(0, n_tr, bs):
            idx = order[start:start + bs]
            pen = None if penalty is None else (lambda out, rows=tr[idx]: penalty(rows, out))
            loss, grads = model.loss_and_grad(Xtr[idx], ytr[idx], pen)
            if not math.isfinite(loss):
                raise DivergenceError(epoch, loss)
            opt.step(params, grads)
        vl = val_mse()
        if not math.isfinite(vl):
            raise DivergenceError(epoch, vl)
        hist.val_loss.append(vl)
        hist.lr.append(opt.lr)
        if vl < best * (1.0 - config.min_delta):
            best, best_model = vl, model.copy()
            hist.best_epoch = epoch
            since_best = since_plateau = 0
        else:
            since_best += 1
            since_plateau += 1
        if since_plateau >= config.plateau_patience:
            opt.lr *= config.plateau_factor
            since_plateau = 0
        if since_best >= config.stop_patience:
            hist.stop_reason = "no improvement"
            break
        if opt.lr < config.min_lr:
            hist.stop_reason = "learning rate floor"
            break
    else:
        hist.stop_reason = "max epochs"
    log.debug("trained %d epochs (%s), best val mse %.6g at %d",
              hist.epochs, hist.stop_reason, best, hist.best_epoch)
    best_model = best_model.astype(np.float64)
    return (best_model, hist) if return_history else best_model


def save_models(path, models, extra=None):
    """Serialize ``{name: FnnModel}`` as flat JSON (row-major weight arrays)."""
    payload = {"models": {k: m.to_dict() for k, m in models.items()}}
    payload.update(extra or {})
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_models(path):
    with open(path) as fh:
        payload = json.load(fh)
    return {k: FnnModel.from_dict(d) for k, d in payload["models"].items()}, payload


def with_seed(config, seed):
    return replace(config, seed=int(seed))

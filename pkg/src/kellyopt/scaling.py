"""Scaling-law pipeline: sigmoid fits, parameter regression, collapse.

Bound profiles produce curves y(x): the certified fraction of achievable
growth as a function of relative subproblem size x = n/N. Each curve is
summarized by a three-parameter generalized sigmoid in logit(x),

    y = (1 + Q exp(-B logit(x)))^(-1/v),    Q, v, B > 0,

fit by least squares on log y. A linear model with 14 summary-statistic
features then predicts (log Q, v, B) for unseen instances, with softplus
links keeping v and B positive and an L2 penalty on the coefficients
(never the intercepts). The collapse transform z = B logit(x) - log Q,
y~ = y^v maps every exact sigmoid curve onto the standard logistic, which
is the visual check that one functional family describes all regimes.

All fitting and evaluation is done on log y; every reported metric (MSE,
MAE, R^2) refers to log-space residuals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import minimize

from .core import ProblemInstance, logit
from .errors import FitError, InputError

LOG_FLOOR = 1e-12


def softplus(x):
    return np.logaddexp(0.0, x)


def softplus_inv(y):
    """Inverse of softplus on (0, inf)."""
    y = np.asarray(y, dtype=float)
    out = y + np.log(-np.expm1(-y))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class SigmoidParams:
    """Generalized sigmoid y = (1 + q e^{-b z})^{-1/v} in z = logit(x)."""

    q: float
    v: float
    b: float

    def __post_init__(self):
        if not (self.q > 0 and self.v > 0 and self.b > 0):
            raise InputError(
                f"sigmoid parameters must be positive, got ({self.q}, {self.v}, {self.b})"
            )


@dataclass(frozen=True)
class FitMetrics:
    mse: float
    mae: float
    r2: float


def _check_x(x: np.ndarray):
    if np.any(x <= 0.0) or np.any(x >= 1.0):
        raise InputError("relative sizes x must lie strictly inside (0, 1)")


def sigmoid_log_eval(x, params: SigmoidParams):
    """log y of the generalized sigmoid; stable for extreme arguments."""
    x = np.asarray(x, dtype=float)
    _check_x(x)
    z = logit(x)
    out = -softplus(math.log(params.q) - params.b * z) / params.v
    return float(out) if np.ndim(out) == 0 else out


def sigmoid_eval(x, params: SigmoidParams):
    """Predicted shortfall ratio in (0, 1)."""
    out = np.exp(sigmoid_log_eval(x, params))
    return float(out) if np.ndim(out) == 0 else out


# Start grid for the curve fits; subsampled per fit by seed.
_START_GRID = [
    (q0, v0, b0)
    for q0 in (0.5, 1.0, 2.0)
    for v0 in (0.5, 1.0, 2.0)
    for b0 in (0.5, 1.0, 3.0)
]


def _fit_loss_grad(phi: np.ndarray, z: np.ndarray, t: np.ndarray):
    """MSE on log y and its gradient in (log q, v', b') with softplus links."""
    lq, vp, bp = phi
    v = float(softplus(vp))
    b = float(softplus(bp))
    g = lq - b * z
    sp = softplus(g)
    sig = 1.0 / (1.0 + np.exp(-np.clip(g, -700, 700)))
    pred = -sp / v
    r = pred - t
    n = len(t)
    loss = float(r @ r) / n
    d_lq = float(r @ (-sig / v)) * 2.0 / n
    d_v = float(r @ (sp / v**2)) * 2.0 / n
    d_b = float(r @ (z * sig / v)) * 2.0 / n
    dv_dvp = 1.0 / (1.0 + math.exp(-vp)) if abs(vp) < 700 else float(vp > 0)
    db_dbp = 1.0 / (1.0 + math.exp(-bp)) if abs(bp) < 700 else float(bp > 0)
    return loss, np.array([d_lq, d_v * dv_dvp, d_b * db_dbp])


def fit_sigmoid(
    x: Sequence[float],
    y: Sequence[float],
    n_starts: int = 5,
    seed: int = 0,
) -> tuple[SigmoidParams, FitMetrics]:
    """Least-squares sigmoid fit of a shortfall curve on log y.

    Runs L-BFGS from ``n_starts`` initializations drawn (deterministically
    by ``seed``) from a coarse parameter grid and keeps the best final
    loss. Degenerate curves (constant y, e.g. identically 1) raise
    FitError rather than returning a meaningless fit.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) < 4:
        raise InputError(f"need at least 4 points to fit, got {len(x)}")
    _check_x(x)
    if np.any(y <= 0.0) or np.any(y > 1.0):
        raise InputError("shortfall values must lie in (0, 1]")
    z = logit(x)
    t = np.log(y)
    if float(np.var(t)) == 0.0:
        raise FitError("constant curve; sigmoid parameters are unidentified")

    rng = np.random.default_rng(seed)
    picks = rng.choice(len(_START_GRID), size=min(n_starts, len(_START_GRID)),
                       replace=False)
    best = None
    failures = []
    for idx in picks:
        q0, v0, b0 = _START_GRID[idx]
        phi0 = np.array([math.log(q0), softplus_inv(v0), softplus_inv(b0)])
        res = minimize(_fit_loss_grad, phi0, args=(z, t), jac=True,
                       method="L-BFGS-B")
        if not np.isfinite(res.fun):
            failures.append((tuple(_START_GRID[idx]), res.message))
            continue
        if best is None or res.fun < best.fun:
            best = res
    if best is None:
        raise FitError(f"all {len(picks)} starts failed: {failures}")

    lq, vp, bp = best.x
    params = SigmoidParams(q=math.exp(lq), v=float(softplus(vp)), b=float(softplus(bp)))
    pred = sigmoid_log_eval(x, params)
    resid = pred - t
    mse = float(np.mean(resid**2))
    mae = float(np.mean(np.abs(resid)))
    ss_tot = float(np.sum((t - t.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / max(ss_tot, 1e-300)
    return params, FitMetrics(mse=mse, mae=mae, r2=r2)


def _moment_features(d: np.ndarray) -> list[float]:
    m = float(d.mean())
    c = d - m
    m2 = float(np.mean(c**2))
    m3 = float(np.mean(c**3))
    m4 = float(np.mean(c**4))
    skew = m3 / m2**1.5 if m2 > 0.0 else 0.0
    kurt = m4 / m2**2 if m2 > 0.0 else 0.0
    return [m, m2, math.log(max(m2, LOG_FLOOR)), skew, kurt,
            math.log(max(kurt, LOG_FLOOR))]


def compute_features(instance: ProblemInstance) -> np.ndarray:
    """14 summary statistics: size plus moments of the disagreements.

    [N, log N] followed by {mean, variance, log variance, skewness,
    kurtosis, log kurtosis} of p - q and then of logit(p) - logit(q).
    Population moments; degenerate ratios guarded to 0; logs floored.
    """
    if instance.contracts is None:
        raise InputError("instance lacks contract metadata needed for features")
    p = np.array([c.p for c in instance.contracts])
    q = np.array([c.q for c in instance.contracts])
    n = instance.n_bets
    feats = [float(n), math.log(n)]
    feats += _moment_features(p - q)
    feats += _moment_features(logit(p) - logit(q))
    return np.array(feats)


N_FEATURES = 14


@dataclass(frozen=True)
class ScalingRecord:
    """One instance's curve, its features, and its per-curve fit."""

    regime: str
    variance_level: str
    n_bets: int
    index: int
    features: np.ndarray
    x: np.ndarray
    y: np.ndarray
    fit_params: SigmoidParams
    fit_metrics: FitMetrics


@dataclass(frozen=True)
class ScalingDataset:
    """Records plus a split assignment (one of the supported seeds)."""

    records: tuple[ScalingRecord, ...]
    split: tuple[str, ...]
    seed: int

    def subset(self, tag: str) -> list[ScalingRecord]:
        return [r for r, s in zip(self.records, self.split) if s == tag]


def split_dataset(records: Sequence[ScalingRecord], seed: int) -> ScalingDataset:
    """60/25/15 train/validation/test split within each problem type.

    A problem type is a (regime, variance level, N) cell; each cell is
    shuffled independently so every type appears in every split. Fractions
    use integer flooring: 1000 records -> 600/250/150.
    """
    groups: dict[tuple, list[int]] = {}
    for i, rec in enumerate(records):
        groups.setdefault((rec.regime, rec.variance_level, rec.n_bets), []).append(i)
    tags = [""] * len(records)
    rng = np.random.default_rng(seed)
    for key in sorted(groups):
        idxs = groups[key]
        n = len(idxs)
        if n < 7:
            raise InputError(
                f"problem type {key} has only {n} records; at least 7 required to split"
            )
        perm = rng.permutation(n)
        n_train = int(0.60 * n)
        n_val = int(0.25 * n)
        for rank, j in enumerate(perm):
            if rank < n_train:
                tags[idxs[j]] = "train"
            elif rank < n_train + n_val:
                tags[idxs[j]] = "val"
            else:
                tags[idxs[j]] = "test"
    return ScalingDataset(records=tuple(records), split=tuple(tags), seed=seed)


@dataclass(frozen=True)
class LinearParamModel:
    """Ridge-regularized linear map from features to sigmoid parameters.

    Raw outputs are (log q, v', b'); prediction applies exp/softplus so
    the returned parameters always satisfy the positivity constraints.
    Features are normalized by training-set statistics stored here.
    """

    feat_mean: np.ndarray
    feat_scale: np.ndarray
    intercepts: np.ndarray  # (3,)
    coefs: np.ndarray  # (3, N_FEATURES)
    ridge_lambda: float
    val_mse: float = math.nan
    n_iter: int = 0

    def raw_outputs(self, features: np.ndarray) -> np.ndarray:
        xt = (features - self.feat_mean) / self.feat_scale
        return self.intercepts + self.coefs @ xt

    def predict(self, features: np.ndarray) -> SigmoidParams:
        lq, vp, bp = self.raw_outputs(features)
        return SigmoidParams(q=math.exp(lq), v=float(softplus(vp)),
                             b=float(softplus(bp)))


def _pack_curves(records: Sequence[ScalingRecord]):
    """Ragged curves to padded matrices (z, t, mask) for vectorized loss."""
    jmax = max(len(r.x) for r in records)
    n = len(records)
    z = np.zeros((n, jmax))
    t = np.zeros((n, jmax))
    mask = np.zeros((n, jmax))
    for i, r in enumerate(records):
        j = len(r.x)
        z[i, :j] = logit(r.x)
        t[i, :j] = np.log(r.y)
        mask[i, :j] = 1.0
    return z, t, mask


def _model_loss_grad(intercepts, coefs, xt, z, t, mask, lam):
    """Data MSE through the sigmoid plus ridge on coefficients."""
    raw = intercepts + xt @ coefs.T  # (R, 3)
    lq = raw[:, 0:1]
    v = softplus(raw[:, 1:2])
    b = softplus(raw[:, 2:3])
    g = lq - b * z
    sp = softplus(g)
    sig = 1.0 / (1.0 + np.exp(-np.clip(g, -700, 700)))
    pred = -sp / v
    r = (pred - t) * mask
    counts = mask.sum(axis=1, keepdims=True)
    n_rec = len(xt)
    per_curve = (r**2).sum(axis=1, keepdims=True) / counts
    data = float(per_curve.mean())
    loss = data + lam * float((coefs**2).sum())

    w = 2.0 * r / counts / n_rec
    d_lq = (w * (-sig / v)).sum(axis=1)
    d_v = (w * (sp / v**2)).sum(axis=1)
    d_b = (w * (z * sig / v)).sum(axis=1)
    dv = d_v * (1.0 / (1.0 + np.exp(-np.clip(raw[:, 1], -700, 700))))
    db = d_b * (1.0 / (1.0 + np.exp(-np.clip(raw[:, 2], -700, 700))))
    draw = np.stack([d_lq, dv, db], axis=1)  # (R, 3)
    grad_int = draw.sum(axis=0)
    grad_coef = draw.T @ xt + 2.0 * lam * coefs
    return loss, data, grad_int, grad_coef


DEFAULT_LAMBDA_GRID = (0.0, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1)


def _fit_one_lambda(xt, z, t, mask, lam, init_int, max_iter, tol):
    intercepts = init_int.copy()
    coefs = np.zeros((3, xt.shape[1]))
    lr = 0.5
    loss, data, gi, gc = _model_loss_grad(intercepts, coefs, xt, z, t, mask, lam)
    it = 0
    for it in range(max_iter):
        stepped = False
        for _ in range(60):
            ni = intercepts - lr * gi
            nc = coefs - lr * gc
            nl, nd, ngi, ngc = _model_loss_grad(ni, nc, xt, z, t, mask, lam)
            if np.isfinite(nl) and nl < loss:
                improvement = loss - nl
                intercepts, coefs = ni, nc
                loss, data, gi, gc = nl, nd, ngi, ngc
                lr *= 1.2
                stepped = True
                break
            lr *= 0.5
        if not stepped or improvement < tol:
            break
    if not np.isfinite(loss):
        raise FitError("parameter-model training produced a non-finite loss")
    return intercepts, coefs, loss, data, it + 1


def train_param_model(
    dataset: ScalingDataset,
    lambda_grid: Sequence[float] = DEFAULT_LAMBDA_GRID,
    max_iter: int = 2000,
    tol: float = 1e-12,
) -> LinearParamModel:
    """Fit the feature-to-parameters model, choosing ridge strength on
    the validation split.

    Full-batch gradient descent with adaptive step halving; the loss is
    the mean over curves of log-space MSE, evaluated through the sigmoid
    at the predicted parameters. Intercepts start at the training-mean
    raw parameters of the per-curve fits; coefficients start at zero.
    """
    train = dataset.subset("train")
    val = dataset.subset("val")
    if not train or not val:
        raise InputError("dataset must have nonempty train and val splits")

    feats = np.stack([r.features for r in train])
    mean = feats.mean(axis=0)
    scale = feats.std(axis=0)
    scale[scale == 0.0] = 1.0
    xt_train = (feats - mean) / scale
    xt_val = (np.stack([r.features for r in val]) - mean) / scale

    z_tr, t_tr, m_tr = _pack_curves(train)
    z_va, t_va, m_va = _pack_curves(val)

    init_int = np.array([
        float(np.mean([math.log(r.fit_params.q) for r in train])),
        float(np.mean([softplus_inv(r.fit_params.v) for r in train])),
        float(np.mean([softplus_inv(r.fit_params.b) for r in train])),
    ])

    best = None
    for lam in lambda_grid:
        intercepts, coefs, _, _, n_iter = _fit_one_lambda(
            xt_train, z_tr, t_tr, m_tr, lam, init_int, max_iter, tol
        )
        _, val_mse, _, _ = _model_loss_grad(
            intercepts, coefs, xt_val, z_va, t_va, m_va, 0.0
        )
        if best is None or val_mse < best[0]:
            best = (val_mse, lam, intercepts, coefs, n_iter)
    val_mse, lam, intercepts, coefs, n_iter = best
    return LinearParamModel(feat_mean=mean, feat_scale=scale,
                            intercepts=intercepts, coefs=coefs,
                            ridge_lambda=lam, val_mse=val_mse, n_iter=n_iter)


def collapse_transform(x, y, params: SigmoidParams):
    """Map a curve into collapsed coordinates (z, y~).

    z = b logit(x) - log q and y~ = y^v; any curve generated exactly by
    ``params`` lands on the standard logistic 1/(1+e^{-z}).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    _check_x(x)
    z = params.b * logit(x) - math.log(params.q)
    return z, y**params.v


@dataclass(frozen=True)
class MetricRow:
    group: str
    count: int
    mse_mean: float
    mae_median: float
    r2_median: float


@dataclass(frozen=True)
class XErrorRow:
    x: float
    count: int
    abs_err_p10: float
    abs_err_p50: float
    abs_err_p90: float
    abs_err_mean: float


@dataclass(frozen=True)
class EvalReport:
    overall: MetricRow
    per_regime: tuple[MetricRow, ...]
    per_n: tuple[MetricRow, ...]
    per_x: tuple[XErrorRow, ...]


def _curve_metrics(t_pred: np.ndarray, t_obs: np.ndarray) -> tuple[float, float, float]:
    resid = t_pred - t_obs
    mse = float(np.mean(resid**2))
    mae = float(np.mean(np.abs(resid)))
    ss_tot = float(np.sum((t_obs - t_obs.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / max(ss_tot, 1e-300)
    return mse, mae, r2


def _aggregate(name: str, rows: list[tuple[float, float, float]]) -> MetricRow:
    arr = np.array(rows)
    return MetricRow(group=name, count=len(rows),
                     mse_mean=float(arr[:, 0].mean()),
                     mae_median=float(np.median(arr[:, 1])),
                     r2_median=float(np.median(arr[:, 2])))


def evaluate_model(model: LinearParamModel, dataset: ScalingDataset,
                   tag: str = "test") -> EvalReport:
    """Predicted-vs-observed log-y metrics on one split.

    Per curve: MSE, MAE, R^2 of the model-predicted sigmoid against the
    observed shortfalls. Aggregates follow the mean-MSE / median-MAE /
    median-R^2 convention, grouped overall, by regime, and by N, plus the
    distribution of absolute errors at each relative size x.
    """
    records = dataset.subset(tag)
    if not records:
        raise InputError(f"split {tag!r} is empty")
    per_curve = []
    by_regime: dict[str, list] = {}
    by_n: dict[int, list] = {}
    by_x: dict[float, list] = {}
    for rec in records:
        params = model.predict(rec.features)
        t_pred = sigmoid_log_eval(rec.x, params)
        t_obs = np.log(rec.y)
        m = _curve_metrics(np.atleast_1d(t_pred), t_obs)
        per_curve.append(m)
        by_regime.setdefault(rec.regime, []).append(m)
        by_n.setdefault(rec.n_bets, []).append(m)
        for xj, ej in zip(rec.x, np.abs(np.atleast_1d(t_pred) - t_obs)):
            by_x.setdefault(round(float(xj), 10), []).append(float(ej))

    per_x = tuple(
        XErrorRow(
            x=xv, count=len(errs),
            abs_err_p10=float(np.percentile(errs, 10)),
            abs_err_p50=float(np.percentile(errs, 50)),
            abs_err_p90=float(np.percentile(errs, 90)),
            abs_err_mean=float(np.mean(errs)),
        )
        for xv, errs in sorted(by_x.items())
    )
    return EvalReport(
        overall=_aggregate("all", per_curve),
        per_regime=tuple(_aggregate(k, v) for k, v in sorted(by_regime.items())),
        per_n=tuple(_aggregate(str(k), v) for k, v in sorted(by_n.items())),
        per_x=per_x,
    )


def fit_quality_summary(records: Sequence[ScalingRecord]) -> tuple[MetricRow, tuple[MetricRow, ...]]:
    """Aggregate per-curve sigmoid fit metrics, overall and by regime."""
    rows = [(r.fit_metrics.mse, r.fit_metrics.mae, r.fit_metrics.r2) for r in records]
    by_regime: dict[str, list] = {}
    for r in records:
        by_regime.setdefault(r.regime, []).append(
            (r.fit_metrics.mse, r.fit_metrics.mae, r.fit_metrics.r2)
        )
    return _aggregate("all", rows), tuple(
        _aggregate(k, v) for k, v in sorted(by_regime.items())
    )

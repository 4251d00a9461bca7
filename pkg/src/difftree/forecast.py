"""Citation-growth models: pooled (LR1) and per-direction (LR2) least squares,
a random intercept + slope mixed model (MLM), repeated k-fold evaluation and
cumulative projection.

Years are measured from an origin (the first observed year unless given), so
intercepts are the predicted count at the origin year.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, NamedTuple, Optional, Sequence

import numpy as np

from .diffusion import DiffusionSeries
from .errors import (DegenerateDesign, FitFailures, InsufficientRows, MissingFit, SingleGroup,
                     TooFewPoints)

logger = logging.getLogger(__name__)

MODELS = ("LR1", "LR2", "MLM")


class Row(NamedTuple):
    year: int
    count: float
    direction: str
    discipline: str


@dataclass(frozen=True)
class RegressionFit:
    slope: float
    intercept: float
    origin: int
    r2: float
    n: int
    group: Optional[str] = None
    r2_flagged: bool = False  # SST == 0, r2 reported as 0

    def predict(self, years):
        return self.intercept + self.slope * (np.asarray(years, dtype=float) - self.origin)


def fit_linear(points: Sequence[tuple[float, float]], group: Optional[str] = None,
               origin: Optional[int] = None) -> RegressionFit:
    """Closed-form ordinary least squares of count on year."""
    if len(points) < 2:
        raise TooFewPoints(f"need at least 2 points, got {len(points)}")
    x = np.array([p[0] for p in points], dtype=float)
    y = np.array([p[1] for p in points], dtype=float)
    if origin is None:
        origin = int(x.min())
    xm, ym = x.mean(), y.mean()
    dx = x - xm
    sxx = float(dx @ dx)
    if sxx == 0.0:
        raise DegenerateDesign(f"all {len(x)} points share year {x[0]:g}")
    slope = float(dx @ (y - ym)) / sxx
    intercept = ym + slope * (origin - xm)
    resid = y - (intercept + slope * (x - origin))
    sse = float(resid @ resid)
    sst = float((y - ym) @ (y - ym))
    if sst == 0.0:
        r2, flagged = 0.0, True
    else:
        r2, flagged = min(1.0, max(0.0, 1.0 - sse / sst)), False
    return RegressionFit(slope, float(intercept), origin, r2, len(x), group, flagged)


def series_points(series: DiffusionSeries) -> list[tuple[int, int]]:
    return [(y, series.counts[y]) for y in series.years]


def fit_lr2(series: Sequence[DiffusionSeries], origin: Optional[int] = None) -> list[RegressionFit]:
    """One least-squares fit per direction; failures are collected, then raised together."""
    if origin is None and series:
        origin = min(min(s.years) for s in series if s.years)
    fits, failures = [], {}
    for s in series:
        try:
            fits.append(fit_linear(series_points(s), s.direction, origin))
        except (TooFewPoints, DegenerateDesign) as exc:
            failures[s.direction] = exc
    if failures:
        err = FitFailures(failures)
        err.fits = fits
        raise err
    return fits


def fit_lr1(series: Sequence[DiffusionSeries], origin: Optional[int] = None) -> RegressionFit:
    """Pooled fit over the rows of every direction."""
    points = [p for s in series for p in series_points(s)]
    return fit_linear(points, None, origin)


# ---------------------------------------------------------------------------
# mixed model


@dataclass(frozen=True)
class MixedModelFit:
    fixed_intercept: float
    fixed_slope: float
    origin: int
    group_effects: dict  # group -> (intercept deviation, slope deviation)
    sigma2: float
    re_cov: tuple  # 2x2 random-effect covariance as nested tuples
    loglik: float
    loglik_trace: tuple = field(default=(), repr=False)
    iterations: int = 0
    converged: bool = True

    @property
    def var_components(self) -> tuple[float, float, float]:
        """(residual, intercept, slope) variances."""
        return (self.sigma2, self.re_cov[0][0], self.re_cov[1][1])

    def predict(self, years, groups) -> np.ndarray:
        x = np.asarray(years, dtype=float) - self.origin
        b = np.array([self.group_effects.get(g, (0.0, 0.0)) for g in groups], dtype=float).reshape(-1, 2)
        return self.fixed_intercept + b[:, 0] + (self.fixed_slope + b[:, 1]) * x


def _group_stats(x, y, groups):
    labels = sorted(set(groups))
    idx = {g: i for i, g in enumerate(labels)}
    gi = np.array([idx[g] for g in groups])
    G = len(labels)
    n = np.bincount(gi, minlength=G).astype(float)
    sx = np.bincount(gi, x, minlength=G)
    sxx = np.bincount(gi, x * x, minlength=G)
    sy = np.bincount(gi, y, minlength=G)
    sxy = np.bincount(gi, x * y, minlength=G)
    syy = np.bincount(gi, y * y, minlength=G)
    XtX = np.stack([np.stack([n, sx], -1), np.stack([sx, sxx], -1)], -2)  # G x 2 x 2
    Xty = np.stack([sy, sxy], -1)  # G x 2
    return labels, n, XtX, Xty, syy


def _e_step(beta, sigma2, D, n, XtX, Xty, yty):
    """Posterior moments of the random effects and the marginal log-likelihood."""
    Xtr = Xty - XtX @ beta
    rtr = yty - 2 * Xty @ beta + np.einsum("i,gij,j->g", beta, XtX, beta)
    A = sigma2 * np.eye(2) + XtX @ D  # sigma2 I + Z'Z D, per group
    Ainv_Xtr = np.linalg.solve(A, Xtr[..., None])[..., 0]
    b_hat = Ainv_Xtr @ D.T
    post_var = D - D @ np.linalg.solve(A, XtX @ D)
    post_var = 0.5 * (post_var + np.swapaxes(post_var, -1, -2))
    quad = (rtr - np.einsum("gi,gi->g", Xtr, b_hat)) / sigma2
    _, logdet_A = np.linalg.slogdet(A)
    loglik = -0.5 * float(np.sum(n * math.log(2 * math.pi) + (n - 2) * math.log(sigma2) + logdet_A + quad))
    return b_hat, post_var, loglik


def _m_step(b_hat, post_var, XtX, XtX_all, Xty, yty, N):
    G = len(b_hat)
    beta = np.linalg.solve(XtX_all, (Xty - np.einsum("gij,gj->gi", XtX, b_hat)).sum(0))
    Xtr = Xty - XtX @ beta
    rtr = yty - 2 * Xty @ beta + np.einsum("i,gij,j->g", beta, XtX, beta)
    expected_sse = (rtr - 2 * np.einsum("gi,gi->g", b_hat, Xtr)
                    + np.einsum("gi,gij,gj->g", b_hat, XtX, b_hat)
                    + np.einsum("gij,gji->g", XtX, post_var))
    sigma2 = max(float(expected_sse.sum()) / N, 1e-300)
    D = (np.einsum("gi,gj->ij", b_hat, b_hat) + post_var.sum(0)) / G
    return beta, 0.5 * (D + D.T), sigma2


def _px_m_step(b_hat, post_var, XtX, Xty, yty, N):
    """Joint least squares for (beta, A) in y = X beta + Z A b + e, then D = A S A'."""
    G = len(b_hat)
    second = np.einsum("gi,gj->gij", b_hat, b_hat) + post_var  # E[b b'] per group
    # parameters: beta (2) then vec(A) column-major (4); Z = X here
    WtW = np.zeros((6, 6))
    Wty = np.zeros(6)
    WtW[:2, :2] = XtX.sum(0)
    cross = np.einsum("gi,gjk->jik", b_hat, XtX).reshape(2, 4)  # sum_g b' kron X'X
    WtW[:2, 2:] = cross
    WtW[2:, :2] = cross.T
    WtW[2:, 2:] = np.einsum("gij,gkl->ikjl", second, XtX).reshape(4, 4)
    Wty[:2] = Xty.sum(0)
    Wty[2:] = np.einsum("gi,gj->ij", b_hat, Xty).reshape(4)
    theta = np.linalg.lstsq(WtW, Wty, rcond=None)[0]
    beta = theta[:2]
    A = theta[2:].reshape(2, 2).T  # undo column-major vec
    expected_sse = float(yty.sum() - 2 * theta @ Wty + theta @ WtW @ theta)
    sigma2 = max(expected_sse / N, 1e-300)
    D = A @ (second.sum(0) / G) @ A.T
    return beta, 0.5 * (D + D.T), sigma2


def fit_mixed(rows: Iterable[tuple[float, float, str]], origin: Optional[int] = None,
              tol: float = 1e-8, max_iter: int = 500, expanded: bool = True) -> MixedModelFit:
    """ML fit of count ~ year + (year | group) by expectation-maximization.

    ``expanded`` selects the parameter-expanded M-step (a 2x2 working scale on
    the random effects), which keeps the monotone EM guarantee but converges
    far faster when the random-effect covariance is near singular.

    Stops when the relative log-likelihood change drops below ``tol``; if
    ``max_iter`` is reached first the fit is returned with
    ``converged=False`` and a warning is logged.
    """
    rows = list(rows)
    x = np.array([r[0] for r in rows], dtype=float)
    y = np.array([r[1] for r in rows], dtype=float)
    groups = [r[2] for r in rows]
    if len(set(groups)) < 2:
        raise SingleGroup("mixed model needs at least two groups")
    by_group = defaultdict(set)
    for xi, g in zip(x, groups):
        by_group[g].add(xi)
    thin = sorted(g for g, yrs in by_group.items() if len(yrs) < 2)
    if thin:
        raise DegenerateDesign(f"groups with fewer than 2 distinct years: {thin}")
    if origin is None:
        origin = int(x.min())
    x = x - origin

    labels, n, XtX, Xty, yty = _group_stats(x, y, groups)
    G = len(labels)
    XtX_all = XtX.sum(0)
    beta = np.linalg.solve(XtX_all, Xty.sum(0))
    resid = y - beta[0] - beta[1] * x
    sigma2 = float(resid @ resid) / len(y)
    scale = max(1.0, float(y @ y) / len(y))
    if sigma2 <= 1e-24 * scale:
        # every group on one common line: no variance to partition
        return MixedModelFit(float(beta[0]), float(beta[1]), origin, {g: (0.0, 0.0) for g in labels},
                             0.0, ((0.0, 0.0), (0.0, 0.0)), math.inf, (math.inf,), 0, True)
    # start the random-effect covariance from the spread of per-group OLS lines
    coefs = np.linalg.solve(XtX, Xty[..., None])[..., 0] - beta
    D = coefs.T @ coefs / G + 1e-6 * sigma2 * np.eye(2)

    trace = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        b_hat, post_var, ll = _e_step(beta, sigma2, D, n, XtX, Xty, yty)
        trace.append(ll)
        if len(trace) >= 2 and abs(trace[-1] - trace[-2]) <= tol * abs(trace[-2]):
            converged = True
            break
        if expanded:
            beta, D, sigma2 = _px_m_step(b_hat, post_var, XtX, Xty, yty, len(y))
        else:
            beta, D, sigma2 = _m_step(b_hat, post_var, XtX, XtX_all, Xty, yty, len(y))
    if not converged:
        logger.warning("mixed model EM stopped after %d iterations without converging", max_iter)
    # report the effects that belong with the final parameters
    b_hat, _, ll = _e_step(beta, sigma2, D, n, XtX, Xty, yty)
    if converged:
        ll = trace[-1]
    effects = {g: (float(b[0]), float(b[1])) for g, b in zip(labels, b_hat)}
    return MixedModelFit(float(beta[0]), float(beta[1]), origin, effects, float(sigma2),
                         ((float(D[0, 0]), float(D[0, 1])), (float(D[1, 0]), float(D[1, 1]))),
                         float(ll), tuple(trace), it, converged)


# ---------------------------------------------------------------------------
# cross-validation


@dataclass(frozen=True)
class Metrics:
    r2: float
    rmsfe: float
    mafe: float


def score(y_true, y_pred) -> tuple[Metrics, bool]:
    """R^2 against the mean of ``y_true`` (flagged and reported 0 when SST is 0), RMSFE, MAFE."""
    y_true = np.asarray(y_true, dtype=float)
    err = y_true - np.asarray(y_pred, dtype=float)
    sse = float(err @ err)
    dev = y_true - y_true.mean()
    sst = float(dev @ dev)
    flagged = sst == 0.0
    r2 = 0.0 if flagged else 1.0 - sse / sst
    return Metrics(r2, math.sqrt(sse / len(err)), float(np.abs(err).mean())), flagged


@dataclass(frozen=True)
class CVReport:
    model_name: str
    train: Metrics
    test: Metrics
    folds: int
    repeats: int
    seed: int
    n_fits: int
    test_r2_flagged: int = 0
    train_r2_flagged: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def as_rows(series: Sequence[DiffusionSeries], discipline_of: Mapping[str, str]) -> list[Row]:
    return [Row(y, s.counts[y], s.direction, discipline_of[s.direction]) for s in series for y in s.years]


def cv_partition(rows: Sequence[Row], model: str, folds: int, seed: int, repeat: int) -> np.ndarray:
    """Fold index for every row in one repeat.

    LR2 shuffles within each direction so every fold keeps every direction in
    its training part; the other models shuffle all rows together.
    """
    rng = np.random.default_rng([seed, repeat])
    fold_of = np.empty(len(rows), dtype=np.int64)
    if model == "LR2":
        by_dir = defaultdict(list)
        for i, r in enumerate(rows):
            by_dir[r.direction].append(i)
        offset = 0
        for d in sorted(by_dir):
            idx = np.array(by_dir[d])
            perm = rng.permutation(len(idx))
            fold_of[idx[perm]] = (offset + np.arange(len(idx))) % folds
            offset += len(idx)
    else:
        perm = rng.permutation(len(rows))
        fold_of[perm] = np.arange(len(rows)) % folds
    return fold_of


def _fit_predict(model: str, train: Sequence[Row], origin: int):
    if model == "LR1":
        fit = fit_linear([(r.year, r.count) for r in train], origin=origin)
        return lambda rs: fit.predict([r.year for r in rs])
    if model == "LR2":
        by_dir = defaultdict(list)
        for r in train:
            by_dir[r.direction].append((r.year, r.count))
        fits = {d: fit_linear(pts, d, origin) for d, pts in by_dir.items()}

        def predict(rs):
            missing = {r.direction for r in rs} - fits.keys()
            if missing:
                raise InsufficientRows(f"directions absent from a training fold: {sorted(missing)}")
            return np.array([fits[r.direction].predict(r.year) for r in rs], dtype=float)
        return predict
    if model == "MLM":
        fit = fit_mixed([(r.year, r.count, r.discipline) for r in train], origin=origin)
        return lambda rs: fit.predict([r.year for r in rs], [r.discipline for r in rs])
    raise ValueError(f"unknown model {model!r}; expected one of {MODELS}")


def cross_validate(rows: Sequence[Row], model: str, folds: int = 10, repeats: int = 100,
                   seed: int = 0) -> CVReport:
    """Repeated k-fold evaluation: ``repeats`` independent shuffles, each split into ``folds``."""
    rows = [Row(*r) for r in rows]
    if model not in MODELS:
        raise ValueError(f"unknown model {model!r}; expected one of {MODELS}")
    if folds < 2 or repeats < 1:
        raise ValueError("need folds >= 2 and repeats >= 1")
    if len(rows) < 2 * folds:
        raise InsufficientRows(f"{len(rows)} rows cannot fill {folds} folds with a fittable training set")
    origin = min(r.year for r in rows)
    train_sum = np.zeros(3)
    test_sum = np.zeros(3)
    flagged_train = flagged_test = n_fits = 0
    for rep in range(repeats):
        fold_of = cv_partition(rows, model, folds, seed, rep)
        for f in range(folds):
            train = [r for r, k in zip(rows, fold_of) if k != f]
            test = [r for r, k in zip(rows, fold_of) if k == f]
            if not test:
                continue
            try:
                predict = _fit_predict(model, train, origin)
            except (TooFewPoints, DegenerateDesign, SingleGroup) as exc:
                raise InsufficientRows(f"repeat {rep}, fold {f}: training set not fittable ({exc})") from exc
            n_fits += 1
            m_train, fl_train = score([r.count for r in train], predict(train))
            m_test, fl_test = score([r.count for r in test], predict(test))
            train_sum += (m_train.r2, m_train.rmsfe, m_train.mafe)
            test_sum += (m_test.r2, m_test.rmsfe, m_test.mafe)
            flagged_train += fl_train
            flagged_test += fl_test
    if n_fits == 0:
        raise InsufficientRows("no fold produced a test set")
    train_avg, test_avg = train_sum / n_fits, test_sum / n_fits
    return CVReport(model, Metrics(*map(float, train_avg)), Metrics(*map(float, test_avg)),
                    folds, repeats, seed, n_fits, flagged_test, flagged_train)


# ---------------------------------------------------------------------------
# projection


@dataclass(frozen=True)
class ForecastTable:
    # direction -> {year: (predicted_new, predicted_cumulative)}
    rows: dict

    def cumulative(self, direction: str, year: int) -> float:
        return self.rows[direction][year][1]


def forecast_cumulative(fits: Iterable[RegressionFit], last_observed: Mapping[str, tuple[int, float]],
                        horizon_year: int) -> ForecastTable:
    """Project yearly additions (clamped at zero) and accumulate them to ``horizon_year``."""
    by_group = {f.group: f for f in fits}
    out = {}
    for direction in sorted(last_observed):
        last_year, cumulative = last_observed[direction]
        if horizon_year <= last_year:
            raise ValueError(f"horizon {horizon_year} is not after last observed year {last_year} "
                             f"for {direction!r}")
        fit = by_group.get(direction)
        if fit is None:
            raise MissingFit(f"no fit for direction {direction!r}")
        table = {}
        total = float(cumulative)
        for year in range(last_year + 1, horizon_year + 1):
            new = max(0.0, float(fit.predict(year)))
            total += new
            table[year] = (new, total)
        out[direction] = table
    return ForecastTable(out)


def last_observed_from_series(series: Sequence[DiffusionSeries]) -> dict:
    return {s.direction: (max(s.years), float(s.total)) for s in series}


def forecast_to_csv(table: ForecastTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["direction", "year", "predicted_new", "predicted_cumulative"])
    for direction, years in table.rows.items():
        for year, (new, cum) in years.items():
            w.writerow([direction, year, f"{new:.6f}", f"{cum:.6f}"])
    return buf.getvalue()


def forecast_to_json(table: ForecastTable) -> str:
    data = {d: [{"year": y, "predicted_new": n, "predicted_cumulative": c} for y, (n, c) in years.items()]
            for d, years in table.rows.items()}
    return json.dumps(data, indent=2, sort_keys=True) + "\n"


def cv_reports_to_csv(reports: Sequence[CVReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "split", "r2", "rmsfe", "mafe", "folds", "repeats", "seed", "n_fits"])
    for rep in reports:
        for split, m in (("train", rep.train), ("test", rep.test)):
            w.writerow([rep.model_name, split, repr(m.r2), repr(m.rmsfe), repr(m.mafe),
                        rep.folds, rep.repeats, rep.seed, rep.n_fits])
    return buf.getvalue()


def fits_to_csv(fits: Sequence[RegressionFit]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["direction", "slope", "intercept", "origin", "r2", "r2_flagged", "n"])
    for f in fits:
        w.writerow([f.group or "", repr(f.slope), repr(f.intercept), f.origin, repr(f.r2),
                    int(f.r2_flagged), f.n])
    return buf.getvalue()

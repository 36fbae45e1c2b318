"""Next-day forecasting models and residual-based anomaly scores.

Each day, per participant and feature, a model is refitted on all earlier
days and the realized value is scored against the distribution of the
model's own held-out training residuals. Scores live in [0, 1]; higher
means more unusual. A multivariate score combines the day's residuals
through their training covariance.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from scipy import stats

from .config import AnomalyConfig
from .schemas import date_to_day, day_to_date

logger = logging.getLogger(__name__)

# display name -> (family, daily column)
FEATURES: dict[str, tuple[str, str]] = {
    "sleep mean eff": ("sleep", "daily_mean_efficiency"),
    "sleep tot hrs": ("sleep", "daily_total_hrs"),
    "# steps": ("steps", "daily_n_steps"),
    "# walks": ("steps", "daily_n_walks"),
    "steps/min walk": ("steps", "daily_walk_steps_per_min"),
    "social # sent": ("sociabilityLog", "daily_n_sent"),
    "social # recv": ("sociabilityLog", "daily_n_received"),
    "social # contact exch": ("sociabilityLog", "daily_n_contacts_both"),
    "# taps": ("tapsLog", "daily_n_taps"),
    "mean intap dur": ("tapsLog", "daily_intertap_mean"),
    "RoG": ("gps-mobility", "RoG"),
    "light mean lum": ("light", "daily_mean_log1p_lux"),
}
SCORE_COLUMNS = ["Patient ID", "Date", "multi var", *FEATURES]
SCORES_FILE = "scores.csv"


class InsufficientHistory(ValueError):
    pass


# --- models ---------------------------------------------------------------------------

@dataclass
class ForecastModel:
    """A fitted one-step-ahead forecaster.

    ``residuals`` are held-out (leave-one-out) errors on the training days,
    indexed by ``residual_days`` (positions in the training series).
    """
    prediction: float
    residuals: np.ndarray
    residual_days: np.ndarray
    variance: float = math.nan

    def predict(self) -> float:
        return self.prediction


def _clean(series) -> np.ndarray:
    y = np.asarray(series, dtype=float)
    if np.isinf(y).any():
        raise ValueError("non-finite values in series")
    return y


def fit_seasonal_ar(series, p: int = 1, season: int = 7, min_history: int = 21) -> ForecastModel:
    """Least squares on lags ``{1..p} | {season, 2*season}`` plus intercept.

    ``series`` holds one value per consecutive day (NaN = missing); the
    forecast is for the day after its end. Design rows with a missing target
    or lag are dropped. Missing lags at forecast time are filled with the
    training mean.
    """
    y = _clean(series)
    if np.isfinite(y).sum() < min_history:
        raise InsufficientHistory(f"{int(np.isfinite(y).sum())} days < {min_history}")
    lags = sorted(set(range(1, p + 1)) | {season, 2 * season})
    L = lags[-1]
    n = len(y)
    rows = np.arange(L, n)
    X = np.column_stack([np.ones(len(rows))] + [y[rows - lag] for lag in lags])
    t = y[rows]
    ok = np.isfinite(t) & np.isfinite(X).all(axis=1)
    X, t, rows = X[ok], t[ok], rows[ok]
    k = X.shape[1]
    if len(t) < k + 2:
        raise InsufficientHistory(f"{len(t)} complete design rows")
    beta, *_ = np.linalg.lstsq(X, t, rcond=None)
    fitted = X @ beta
    # leave-one-out residuals from the hat matrix diagonal
    pinv = np.linalg.pinv(X)
    h = np.einsum("ij,ji->i", X, pinv)
    denom = 1.0 - h
    e = t - fitted
    loo = np.where(denom > 1e-8, e / np.where(denom > 1e-8, denom, 1.0), e)
    mean = float(np.nanmean(y))
    x_new = np.array([1.0] + [y[n - lag] if n - lag >= 0 and np.isfinite(y[n - lag]) else mean for lag in lags])
    return ForecastModel(float(x_new @ beta), loo, rows)


def _kernel(a, b, length: float, period: float, per_length: float = 1.0) -> np.ndarray:
    d = np.subtract.outer(np.asarray(a, float), np.asarray(b, float))
    se = np.exp(-0.5 * (d / length) ** 2)
    per = np.exp(-2.0 * np.sin(np.pi * d / period) ** 2 / per_length ** 2)
    return se + per


def gp_kernel_matrix(days, length: float = 10.0, period: float = 7.0, noise: float = 0.1) -> np.ndarray:
    """Squared-exponential + periodic kernel with white noise, unit amplitudes."""
    K = _kernel(days, days, length, period)
    K[np.diag_indices_from(K)] += noise ** 2
    return K


def _gp_solve(days, z, length, noise):
    K = gp_kernel_matrix(days, length, 7.0, noise)
    c = np.linalg.cholesky(K)
    alpha = np.linalg.solve(c.T, np.linalg.solve(c, z))
    loglik = -0.5 * z @ alpha - np.log(np.diag(c)).sum() - 0.5 * len(z) * np.log(2 * np.pi)
    return c, alpha, loglik


def fit_periodic_gp(series, length: float = 10.0, noise: float = 0.1, grid_search: bool = False,
                    min_history: int = 21) -> ForecastModel:
    """GP regression on standardized values; forecast for the day after the series.

    ``noise`` is in units of the sample standard deviation. With
    ``grid_search`` the length scale and noise are chosen by marginal
    likelihood over a small grid.
    """
    y = _clean(series)
    days = np.flatnonzero(np.isfinite(y)).astype(float)
    if len(days) < min_history:
        raise InsufficientHistory(f"{len(days)} days < {min_history}")
    v = y[np.isfinite(y)]
    mu = v.mean()
    sd = v.std()
    scale = sd if sd > 0 else 1.0
    z = (v - mu) / scale
    grid = [(length, noise)]
    if grid_search:
        grid = [(ell, s) for ell in (5.0, 10.0, 20.0, 40.0) for s in (0.05, 0.1, 0.3, 0.6)]
    best = None
    for ell, s in grid:
        c, alpha, ll = _gp_solve(days, z, ell, s)
        if best is None or ll > best[0]:
            best = (ll, ell, s, c, alpha)
    _, ell, s, c, alpha = best
    t_new = float(len(y))
    k_star = _kernel([t_new], days, ell, 7.0)[0]
    mean = k_star @ alpha
    w = np.linalg.solve(c, k_star)
    var = max(2.0 - w @ w, 0.0) + s ** 2
    # leave-one-out residuals: alpha_i / [K^-1]_ii
    Kinv = np.linalg.solve(c.T, np.linalg.solve(c, np.eye(len(days))))
    loo = alpha / np.diag(Kinv) * scale
    return ForecastModel(float(mu + mean * scale), loo, days.astype(int), float(var * scale ** 2))


def fit_model(series, cfg: AnomalyConfig | None = None) -> ForecastModel:
    cfg = cfg or AnomalyConfig()
    if cfg.model == "gp":
        return fit_periodic_gp(series, grid_search=cfg.gp_grid_search, min_history=cfg.min_history)
    if cfg.model == "ar":
        return fit_seasonal_ar(series, cfg.ar_order, cfg.season, cfg.min_history)
    raise ValueError(f"unknown model {cfg.model!r}")


# --- scores ---------------------------------------------------------------------------

def empirical_cdf(sample, x: float) -> float:
    """Midpoint ECDF: (#below + #equal / 2) / n."""
    s = np.asarray(sample, float)
    return float(((s < x).sum() + 0.5 * (s == x).sum()) / len(s))


def tail_score(sample, r: float) -> float:
    """``1 - 2 min(F, 1 - F)`` of the midpoint ECDF, i.e. |#below - #above| / n."""
    s = np.asarray(sample, float)
    return float(abs(int((s < r).sum()) - int((s > r).sum())) / len(s))


def score_day(model: ForecastModel, observed) -> float:
    """Two-sided empirical tail score of the realized error; NaN when unobserved."""
    if observed is None or not np.isfinite(observed) or len(model.residuals) == 0:
        return math.nan
    return tail_score(model.residuals, float(observed) - model.prediction)


def score_multivariate(z, train) -> float:
    """Chi-square CDF of the Mahalanobis distance of residual vector ``z``.

    ``train`` is a (days x k) matrix of training residuals. Columns are
    standardized by their training spread; covariance gets a ridge of
    1e-3 * trace / k.
    """
    z = np.asarray(z, float)
    R = np.asarray(train, float)
    if R.ndim != 2 or R.shape[1] != len(z):
        raise ValueError("shape mismatch")
    if len(R) < 21:
        raise InsufficientHistory(f"{len(R)} joint-complete days")
    k = len(z)
    center = R.mean(axis=0)
    spread = R.std(axis=0, ddof=1)
    spread = np.where(spread > 0, spread, 1.0)
    Rs = (R - center) / spread
    zs = (z - center) / spread
    C = np.atleast_2d(np.cov(Rs, rowvar=False))
    C = C + 1e-3 * np.trace(C) / k * np.eye(k)
    d2 = float(zs @ np.linalg.solve(C, zs))
    return float(min(1.0, max(0.0, stats.chi2.cdf(d2, df=k))))


# --- study-level update -----------------------------------------------------------------

def feature_table(daily: dict[str, pd.DataFrame]) -> pd.DataFrame:
    """Daily values of the 12 features indexed by day number (missing -> NaN)."""
    cols = {}
    for name, (family, col) in FEATURES.items():
        df = daily.get(family)
        if df is not None and col in df:
            cols[name] = pd.Series(df[col].to_numpy(float), index=df["day"].to_numpy())
        else:
            cols[name] = pd.Series(dtype=float)
    out = pd.DataFrame(cols)
    out.index.name = "day"
    return out.sort_index()


def score_participant_day(table: pd.DataFrame, day: int, cfg: AnomalyConfig | None = None) -> dict[str, float]:
    """Scores for ``day`` using all history strictly before it."""
    cfg = cfg or AnomalyConfig()
    out = {"multi var": math.nan, **{f: math.nan for f in FEATURES}}
    hist = table[table.index < day]
    if hist.empty:
        return out
    first = int(hist.index.min())
    span = np.arange(first, day)
    hist = hist.reindex(span)
    realized = table.loc[day] if day in table.index else pd.Series(dtype=float)
    res_cols, z = {}, {}
    for name in FEATURES:
        obs = realized.get(name, math.nan)
        try:
            model = fit_model(hist[name].to_numpy(float), cfg)
        except (InsufficientHistory, np.linalg.LinAlgError, ValueError) as exc:
            logger.debug("%s on %s: %s", name, day_to_date(day), exc)
            continue
        out[name] = score_day(model, obs)
        res_cols[name] = pd.Series(model.residuals, index=model.residual_days)
        if np.isfinite(obs):
            z[name] = float(obs) - model.prediction
    names = [n for n in FEATURES if n in z]
    if len(names) >= 2:
        R = pd.DataFrame({n: res_cols[n] for n in names}).dropna()
        try:
            out["multi var"] = score_multivariate([z[n] for n in names], R.to_numpy())
        except (InsufficientHistory, np.linalg.LinAlgError):
            pass
    return out


def score_participant(daily: dict[str, pd.DataFrame], days, cfg: AnomalyConfig | None = None) -> list[dict]:
    table = feature_table(daily)
    return [score_participant_day(table, int(d), cfg) for d in days]


def format_scores(rows: pd.DataFrame) -> bytes:
    def fmt(v):
        return "nan" if not np.isfinite(v) else f"{v:.4f}"

    lines = [",".join(SCORE_COLUMNS)]
    for rec in rows.itertuples(index=False):
        vals = list(rec)
        lines.append(",".join([str(vals[0]), str(vals[1])] + [fmt(float(v)) for v in vals[2:]]))
    return ("\n".join(lines) + "\n").encode()


def read_scores(path: Path) -> pd.DataFrame:
    if not Path(path).exists():
        return pd.DataFrame(columns=SCORE_COLUMNS)
    return pd.read_csv(path, dtype={"Patient ID": str, "Date": str}, na_values=["nan"], keep_default_na=False)


def update_daily(layout, dates, cfg: AnomalyConfig | None = None) -> pd.DataFrame:
    """Score ``dates`` (ISO strings) for every participant and merge into the score table.

    Rows for the same (participant, date) are replaced, so reruns are
    idempotent. Returns the new rows.
    """
    from .pipeline import load_summaries
    from .store import atomic_write

    cfg = cfg or AnomalyConfig()
    if isinstance(dates, str):
        dates = [dates]
    days = [date_to_day(d) for d in dates]
    base = layout.stage(5)
    pids = sorted(p.name for p in base.iterdir() if p.is_dir()) if base.is_dir() else []
    rows = []
    for pid in pids:
        try:
            _, daily = load_summaries(layout, pid)
            scores = score_participant(daily, days, cfg)
        except Exception as exc:  # one participant never blocks the table
            logger.warning("anomaly %s: %s", pid, exc)
            scores = [{"multi var": math.nan, **{f: math.nan for f in FEATURES}} for _ in days]
        for d, s in zip(days, scores):
            rows.append({"Patient ID": pid, "Date": day_to_date(d), **s})
    new = pd.DataFrame(rows, columns=SCORE_COLUMNS)
    path = layout.anomaly_dir / SCORES_FILE
    old = read_scores(path)
    if len(old):
        done = set(zip(new["Patient ID"], new["Date"]))
        keep = [(p, d) not in done for p, d in zip(old["Patient ID"], old["Date"])]
        old = old[keep]
    merged = pd.concat([old, new], ignore_index=True) if len(old) else new
    merged = merged.sort_values(["Date", "Patient ID"], kind="mergesort")
    atomic_write(path, format_scores(merged))
    return new

"""Before/after event-window comparison with paired t and Wilcoxon signed-rank tests."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .config import CompareConfig
from .schemas import date_to_day

EXACT_MAX_N = 20

# features of the lockdown comparison; ``family.hourly_stat`` means the mean over the day's hours
DEFAULT_COMPARE_FEATURES = [
    "accel.hourly_L_std",
    "accel.hourly_ddt_max",
    "light.hourly_max_log1p_lux",
    "callLog.daily_n_incoming",
    "gps-mobility.Hometime",
    "gps-mobility.SigLocsVisited",
    "powerState.daily_n_screen_on",
    "tapsLog.daily_n_unique_apps",
    "tapsLog.daily_n_taps_in_entertainment",
    "steps.daily_n_steps",
    "steps.daily_n_mins_walk",
    "heart.daily_HR_mean",
    "heart.daily_HR_min",
    "sleep.daily_total_hrs",
    "sleep.daily_mean_efficiency",
]
REPORT_COLUMNS = ["Feature name", "6-wk mean before", "6-wk mean after", "Paired t-test (p-value)",
                  "Wilcoxon signed rank test (p-value)", "n"]


class DegenerateSample(ValueError):
    pass


class AllZeroDiffs(ValueError):
    pass


class NoEligibleParticipants(ValueError):
    pass


# --- special functions -------------------------------------------------------------------

def _betacf(a: float, b: float, x: float, eps: float = 1e-16, max_iter: int = 10_000) -> float:
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def betainc_reg(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    lbeta = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
    front = math.exp(lbeta + a * math.log(x) + b * math.log1p(-x))
    # the fraction converges fast on the side below the mean
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_two_sided_p(t: float, dof: float) -> float:
    """Two-sided Student-t tail probability P(|T| >= |t|)."""
    if not math.isfinite(t):
        return 0.0
    x = dof / (dof + t * t)
    return min(1.0, max(0.0, betainc_reg(dof / 2.0, 0.5, x)))


# --- tests -------------------------------------------------------------------------------

def paired_t_test(diffs) -> tuple[float, float]:
    d = np.asarray(diffs, dtype=float)
    n = len(d)
    if n < 2:
        raise DegenerateSample(f"n={n}")
    sd = d.std(ddof=1)
    if not sd > 0:
        raise DegenerateSample("zero variance")
    t = float(d.mean() / (sd / math.sqrt(n)))
    return t, t_two_sided_p(t, n - 1)


def midranks(x) -> np.ndarray:
    """Ranks 1..n with ties given their average rank."""
    x = np.asarray(x, dtype=float)
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(len(x), dtype=float)
    xs = x[order]
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and xs[j + 1] == xs[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def _signed_rank_counts(ranks2: np.ndarray) -> np.ndarray:
    """Number of sign assignments giving each value of 2*W+ (integer ranks doubled)."""
    total = int(ranks2.sum())
    counts = np.zeros(total + 1, dtype=np.int64)
    counts[0] = 1
    hi = 0
    for r in ranks2.astype(int):
        new = counts.copy()
        new[r:hi + r + 1] += counts[:hi + 1]
        counts = new
        hi += r
    return counts


def wilcoxon_signed_rank(diffs) -> tuple[float, float]:
    """``(W, p)`` with W = min(W+, W-); zero differences are dropped.

    For n <= 20 the two-sided p is exact: the share of the 2^n sign
    assignments whose statistic is at most the observed one. Larger samples
    use the normal approximation with tie and continuity corrections.
    """
    d = np.asarray(diffs, dtype=float)
    d = d[d != 0]
    n = len(d)
    if n == 0:
        raise AllZeroDiffs("all differences are zero")
    r = midranks(np.abs(d))
    w_plus = float(r[d > 0].sum())
    total = float(r.sum())
    w = min(w_plus, total - w_plus)
    if n <= EXACT_MAX_N:
        r2 = np.rint(2 * r).astype(int)
        counts = _signed_rank_counts(r2)
        w2 = int(round(2 * w))
        t2 = int(r2.sum())
        v = np.arange(len(counts))
        hit = np.minimum(v, t2 - v) <= w2
        p = int(counts[hit].sum()) / 2 ** n
        return w, float(min(1.0, p))
    mean = n * (n + 1) / 4.0
    _, tie_counts = np.unique(r, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - float(((tie_counts ** 3) - tie_counts).sum()) / 48.0
    if var <= 0:
        return w, 1.0
    z = max(0.0, abs(w - mean) - 0.5) / math.sqrt(var)
    return w, float(min(1.0, math.erfc(z / math.sqrt(2.0))))


# --- window comparison -----------------------------------------------------------------

@dataclass
class WindowSpec:
    event_date: str
    pre: tuple[int, int] = (-45, -3)
    post: tuple[int, int] = (3, 45)
    completeness: float = 0.5

    def __post_init__(self):
        if not (0 < self.completeness <= 1):
            raise ValueError("completeness must be in (0, 1]")
        for lo, hi in (self.pre, self.post):
            if lo > hi:
                raise ValueError(f"empty window [{lo}, {hi}]")
        if not (self.pre[1] < self.post[0] or self.post[1] < self.pre[0]):
            raise ValueError("windows overlap")

    @classmethod
    def from_config(cls, event_date: str, cfg: CompareConfig | None = None) -> "WindowSpec":
        cfg = cfg or CompareConfig()
        return cls(event_date, tuple(cfg.pre), tuple(cfg.post), cfg.completeness)


@dataclass
class ComparisonRow:
    feature: str
    mean_pre: float
    mean_post: float
    t_p: float
    wilcoxon_p: float
    n: int
    t: float = math.nan
    w: float = math.nan
    excluded: list = field(default_factory=list)

    def as_record(self) -> dict:
        return dict(zip(REPORT_COLUMNS, [self.feature, self.mean_pre, self.mean_post, self.t_p, self.wilcoxon_p,
                                         self.n]))


def feature_values(table: pd.DataFrame, feature: str) -> pd.Series:
    """A feature column; ``family.hourly_stat`` averages the 24 hourly columns of each day."""
    if feature in table:
        return table[feature].astype(float)
    hours = [c for c in table.columns if c.startswith(feature + ".h")]
    if not hours:
        raise KeyError(feature)
    with np.errstate(all="ignore"):
        vals = table[hours].to_numpy(float)
        ok = np.isfinite(vals).any(axis=1)
        out = np.full(len(table), np.nan)
        out[ok] = np.nanmean(vals[ok], axis=1)
    return pd.Series(out, index=table.index)


def window_compare(table: pd.DataFrame, spec: WindowSpec, features=None) -> list[ComparisonRow]:
    """Per-feature paired comparison of participant means in the two windows.

    ``table`` is the long daily table (``participant``, ``date`` plus feature
    columns). A participant enters a feature's comparison only when at least
    ``completeness`` of the days in each window have a value.
    """
    features = list(features or DEFAULT_COMPARE_FEATURES)
    event = date_to_day(spec.event_date)
    day = pd.to_datetime(table["date"]).to_numpy().astype("datetime64[D]").astype("int64") - event
    pre = (day >= spec.pre[0]) & (day <= spec.pre[1])
    post = (day >= spec.post[0]) & (day <= spec.post[1])
    n_pre = spec.pre[1] - spec.pre[0] + 1
    n_post = spec.post[1] - spec.post[0] + 1
    pids = table["participant"].to_numpy()
    rows = []
    any_eligible = False
    for feat in features:
        vals = feature_values(table, feat).to_numpy(float)
        a, b, excluded = [], [], []
        for pid in sorted(set(pids)):
            mine = pids == pid
            x = vals[mine & pre]
            y = vals[mine & post]
            x, y = x[np.isfinite(x)], y[np.isfinite(y)]
            if len(x) < spec.completeness * n_pre or len(y) < spec.completeness * n_post:
                excluded.append(pid)
                continue
            a.append(x.mean())
            b.append(y.mean())
        a, b = np.array(a), np.array(b)
        row = ComparisonRow(feat, float(a.mean()) if len(a) else math.nan,
                            float(b.mean()) if len(b) else math.nan, math.nan, math.nan, len(a), excluded=excluded)
        if len(a):
            any_eligible = True
            diffs = b - a
            try:
                row.t, row.t_p = paired_t_test(diffs)
            except DegenerateSample:
                row.t_p = 1.0 if len(diffs) >= 2 and np.all(diffs == diffs[0]) and diffs[0] == 0 else math.nan
            try:
                row.w, row.wilcoxon_p = wilcoxon_signed_rank(diffs)
            except AllZeroDiffs:
                row.w, row.wilcoxon_p = 0.0, 1.0
        rows.append(row)
    if not any_eligible:
        raise NoEligibleParticipants("no participant meets completeness in both windows")
    return rows


def report_frame(rows: list[ComparisonRow]) -> pd.DataFrame:
    return pd.DataFrame([r.as_record() for r in rows], columns=REPORT_COLUMNS)


def report_csv(rows: list[ComparisonRow]) -> bytes:
    df = report_frame(rows)
    return df.to_csv(index=False, float_format="%.6g", na_rep="nan", lineterminator="\n").encode()

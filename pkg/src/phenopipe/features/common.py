"""Shared helpers for the per-family summarizers.

Every summarizer returns a :class:`Summary` holding an hourly frame
(``day``, ``hour``, stats...) and/or a daily frame (``day``, stats...).
``day`` is the local calendar day as days since the epoch. Hourly frames carry
all 24 hours of every day on which the family has data; count statistics are
0 in hours without input and every other statistic is NaN there.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from ..schemas import MS_PER_DAY, MS_PER_HOUR, local_ms


@dataclass
class Summary:
    hourly: pd.DataFrame | None = None
    daily: pd.DataFrame | None = None
    # statistic names that are counts (0 rather than missing in empty hours)
    counts: frozenset = field(default_factory=frozenset)


def ordered(df: pd.DataFrame) -> pd.DataFrame:
    """Rows in (timestamp, payload...) order so pairwise statistics do not depend on input order."""
    if df.empty:
        return df.reset_index(drop=True)
    ts = df["timestamp"].to_numpy()
    if len(ts) < 2 or np.all(ts[1:] > ts[:-1]):
        return df.reset_index(drop=True)
    return df.sort_values(list(df.columns), kind="mergesort").reset_index(drop=True)


def hour_keys(df: pd.DataFrame) -> np.ndarray:
    """Absolute local hour index; day = key // 24, hour = key % 24."""
    return local_ms(df) // MS_PER_HOUR


def day_keys(df: pd.DataFrame) -> np.ndarray:
    return local_ms(df) // MS_PER_DAY


def pair_mask(ts_ms: np.ndarray, keys: np.ndarray, max_dt_s: float | None = None,
              allow_zero: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Mask over consecutive pairs (i, i+1) that share a bucket and whose gap is in range.

    Returns ``(mask, dt_s)`` where both have length ``n - 1``.
    """
    if len(ts_ms) < 2:
        return np.zeros(0, dtype=bool), np.zeros(0)
    dt = np.diff(ts_ms).astype(float) / 1000.0
    ok = keys[1:] == keys[:-1]
    ok &= dt >= 0 if allow_zero else dt > 0
    if max_dt_s is not None:
        ok &= dt <= max_dt_s
    return ok, dt


_AGG = {"max": "max", "min": "min", "mean": "mean", "median": "median", "sum": "sum", "count": "size"}


def group_stats(keys: np.ndarray, values: np.ndarray, stats: dict[str, str]) -> pd.DataFrame:
    """Aggregate ``values`` by ``keys``; ``stats`` maps output name -> statistic.

    Statistics: max, min, mean, median, std (population), sum, count, q<frac>.
    """
    if len(keys) == 0:
        return pd.DataFrame(columns=list(stats), dtype=float)
    g = pd.Series(np.asarray(values, dtype=float)).groupby(np.asarray(keys))
    out = {}
    for name, stat in stats.items():
        if stat == "std":
            out[name] = g.std(ddof=0)
        elif stat.startswith("q"):
            out[name] = g.quantile(float(stat[1:]))
        else:
            out[name] = getattr(g, _AGG[stat])()
    return pd.DataFrame(out)


def expand_hourly(stats: pd.DataFrame, days, counts=()) -> pd.DataFrame:
    """Spread hour-keyed stats onto a full 24-hour grid for ``days``."""
    days = np.unique(np.asarray(list(days), dtype="int64"))
    grid = (days[:, None] * 24 + np.arange(24)[None, :]).ravel()
    full = stats.reindex(grid)
    for c in counts:
        if c in full:
            full[c] = full[c].fillna(0)
    full.insert(0, "hour", grid % 24)
    full.insert(0, "day", grid // 24)
    return full.reset_index(drop=True)


def finalize_daily(stats: pd.DataFrame, days=None) -> pd.DataFrame:
    if days is not None:
        stats = stats.reindex(np.unique(np.asarray(list(days), dtype="int64")))
    out = stats.copy()
    out.insert(0, "day", out.index.to_numpy(dtype="int64"))
    return out.reset_index(drop=True)


def top_half_mean(keys: np.ndarray, values: np.ndarray) -> pd.Series:
    """Per key, mean of the largest ceil(n/2) values."""
    if len(keys) == 0:
        return pd.Series(dtype=float)
    order = np.lexsort((-np.asarray(values, dtype=float), keys))
    k = np.asarray(keys)[order]
    v = np.asarray(values, dtype=float)[order]
    rank = pd.Series(k).groupby(k).cumcount().to_numpy()
    n = pd.Series(k).groupby(k).transform("size").to_numpy()
    keep = rank < np.ceil(n / 2)
    return pd.Series(v[keep]).groupby(k[keep]).mean()


def runs(mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Start indices and lengths of maximal True runs in a 1-D boolean array."""
    m = np.concatenate(([False], np.asarray(mask, dtype=bool), [False]))
    d = np.diff(m.astype(np.int8))
    starts = np.flatnonzero(d == 1)
    ends = np.flatnonzero(d == -1)
    return starts, ends - starts


def ceil_half(n: int) -> int:
    return math.ceil(n / 2)

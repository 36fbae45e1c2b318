"""Walk detection against an exhaustive scan over every short step sequence.

All sequences of length 1..12 over {0, 9, 10, 50} (22.4 million in total)
go through the production run finder and through an independent
window-based formulation: a minute belongs to a walk exactly when some
window of three consecutive qualifying minutes contains it.
"""

import numpy as np
import pandas as pd

from phenopipe.features.wearable import summarize_steps, walk_runs

VALUES = np.array([0, 9, 10, 50], dtype=np.int64)
CHUNK = 1 << 20


def sequences(L, lo, hi):
    idx = np.arange(lo, hi, dtype=np.int64)
    digits = (idx[:, None] // (4 ** np.arange(L - 1, -1, -1))) % 4
    return VALUES[digits]


def window_oracle(M, min_steps=10, min_minutes=3):
    """Per row: (n_walks, walk minutes, walk steps, longest walk, largest walk steps)."""
    n, L = M.shape
    q = M >= min_steps
    in_walk = np.zeros_like(q)
    for i in range(L - min_minutes + 1):
        w = q[:, i:i + min_minutes].all(axis=1)
        in_walk[:, i:i + min_minutes] |= w[:, None]
    starts = in_walk & ~np.concatenate([np.zeros((n, 1), bool), in_walk[:, :-1]], axis=1)
    run_len = np.zeros(n, np.int64)
    run_steps = np.zeros(n, np.int64)
    longest = np.zeros(n, np.int64)
    biggest = np.zeros(n, np.int64)
    for i in range(L):
        run_len = np.where(in_walk[:, i], run_len + 1, 0)
        run_steps = np.where(in_walk[:, i], run_steps + M[:, i], 0)
        longest = np.maximum(longest, run_len)
        biggest = np.maximum(biggest, run_steps)
    return (starts.sum(axis=1), in_walk.sum(axis=1), (M * in_walk).sum(axis=1), longest, biggest)


def production(M):
    n = len(M)
    row, _, length, steps = walk_runs(M)
    count = np.bincount(row, minlength=n)
    mins = np.bincount(row, weights=length, minlength=n).astype(np.int64)
    tot = np.bincount(row, weights=steps, minlength=n).astype(np.int64)
    longest = np.zeros(n, np.int64)
    biggest = np.zeros(n, np.int64)
    np.maximum.at(longest, row, length)
    np.maximum.at(biggest, row, steps)
    return count, mins, tot, longest, biggest


def exhaustive_mismatches(max_len=12) -> int:
    bad = 0
    for L in range(1, max_len + 1):
        total = 4 ** L
        for lo in range(0, total, CHUNK):
            M = sequences(L, lo, min(total, lo + CHUNK))
            for a, b in zip(production(M), window_oracle(M)):
                bad += int((a != b).sum())
    return bad


def test_exhaustive_scan_up_to_eight_minutes():
    # the full 4^12 scan runs in the acceptance suite
    assert exhaustive_mismatches(8) == 0


def test_known_sequences():
    M = np.array([[12, 11, 10, 0, 0], [12, 9, 12, 12, 12], [10, 10, 0, 50, 50]])
    count, mins, tot, longest, _ = production(M)
    assert count.tolist() == [1, 1, 0]
    assert mins.tolist() == [3, 3, 0]
    assert tot.tolist() == [33, 36, 0]


def test_summarizer_agrees_on_sample():
    rng = np.random.default_rng(4)
    L = 12
    idx = rng.choice(4 ** L, 300, replace=False)
    M = VALUES[(idx[:, None] // (4 ** np.arange(L - 1, -1, -1))) % 4]
    n_walks, walk_mins, walk_steps, longest, _ = window_oracle(M)
    t0 = 18_500 * 86_400_000
    for i, row in enumerate(M):
        df = pd.DataFrame({"timestamp": t0 + 3_600_000 * 10 + 60_000 * np.arange(L), "tz_offset": 0, "steps": row})
        d = summarize_steps(df).daily.iloc[0]
        assert d["daily_n_walks"] == n_walks[i]
        assert d["daily_n_mins_walk"] == walk_mins[i]
        if n_walks[i]:
            assert d["daily_walk_mins_max"] == longest[i]
            assert d["daily_walk_steps_per_min"] == walk_steps[i] / walk_mins[i]

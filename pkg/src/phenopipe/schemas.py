"""CSV schemas for the 13 raw feature kinds, plus tolerant parsing.

Every raw file starts with ``timestamp`` (epoch milliseconds, or seconds for
some wearable exports until patched) and ``tz_offset`` (minutes from UTC).
A ``datetime`` column is accepted in place of ``timestamp``.
"""

from __future__ import annotations

import io
import logging
from enum import Enum

import numpy as np
import pandas as pd
import pyarrow as pa
import pyarrow.compute as pc
import pyarrow.csv as pacsv
import pyarrow.lib as _palib

logger = logging.getLogger(__name__)

# On CPython 3.10 pyarrow guards a signal-handler reference cycle by walking
# gc referrers on every read, which dominates small-file parsing. The cycle is
# ordinary garbage and the collector reclaims it.
if getattr(_palib, "have_signal_refcycle", False):
    _palib.have_signal_refcycle = False

MS_PER_DAY = 86_400_000
MS_PER_HOUR = 3_600_000
SECONDS_THRESHOLD = 10**11
TZ_LIMIT_MIN = 14 * 60
SLEEP_STAGES = ("deep", "light", "rem", "awake")
KEYBOARD_TOKENS = frozenset({"alphabetic", "numeric", "punctuation", "DELETE", "enter", "space"})
POWER_EVENTS = frozenset({"screen_on", "screen_off", "power_off", "power_on", "idle_on", "idle_off"})


class FeatureKind(str, Enum):
    accel = "accel"
    accessibilityLog = "accessibilityLog"
    callLog = "callLog"
    gps = "gps"
    heart = "heart"
    light = "light"
    powerState = "powerState"
    sleep = "sleep"
    sociabilityCallLog = "sociabilityCallLog"
    sociabilityLog = "sociabilityLog"
    steps = "steps"
    tapsLog = "tapsLog"
    textsLog = "textsLog"


WEARABLE_KINDS = (FeatureKind.heart, FeatureKind.steps, FeatureKind.sleep)
PHONE_KINDS = tuple(k for k in FeatureKind if k not in WEARABLE_KINDS)

# column -> dtype, after the shared timestamp/tz_offset pair
PAYLOAD: dict[FeatureKind, dict[str, str]] = {
    FeatureKind.accel: {"x": "float", "y": "float", "z": "float"},
    FeatureKind.accessibilityLog: {"token": "str", "app": "str"},
    FeatureKind.callLog: {"direction": "str", "contact": "str", "duration_s": "int", "type": "str"},
    FeatureKind.gps: {"lat": "float", "lon": "float", "accuracy": "float"},
    FeatureKind.heart: {"bpm": "int"},
    FeatureKind.light: {"lux": "float"},
    FeatureKind.powerState: {"event": "str"},
    FeatureKind.sleep: {"stage": "str", "duration_s": "int"},
    FeatureKind.sociabilityCallLog: {"direction": "str", "contact": "str", "duration_s": "int", "type": "str"},
    FeatureKind.sociabilityLog: {"direction": "str", "contact": "str", "length": "int", "type": "str"},
    FeatureKind.steps: {"steps": "int"},
    FeatureKind.tapsLog: {"app": "str", "orientation": "int"},
    FeatureKind.textsLog: {"direction": "str", "contact": "str", "length": "int"},
}

_ARROW = {"int": pa.int64(), "float": pa.float64(), "str": pa.string()}


class SchemaError(ValueError):
    pass


class MissingTimestampColumn(SchemaError):
    pass


class UnknownKind(SchemaError):
    pass


def as_kind(kind) -> FeatureKind:
    try:
        return FeatureKind(kind)
    except ValueError:
        raise UnknownKind(str(kind)) from None


def columns(kind) -> dict[str, str]:
    """Full ordered schema of a kind, including derived columns added in stage 4."""
    kind = as_kind(kind)
    return {"timestamp": "int", "tz_offset": "int", **PAYLOAD[kind]}


def header(kind) -> str:
    return ",".join(columns(kind))


def empty_frame(kind) -> pd.DataFrame:
    cols = columns(kind)
    return pd.DataFrame({c: pd.Series(dtype=_pandas_dtype(t)) for c, t in cols.items()})


def _pandas_dtype(t: str):
    return {"int": "int64", "float": "float64", "str": "object"}[t]


def _valid_mask(kind: FeatureKind, table: pa.Table) -> np.ndarray:
    """Row-level record invariants on a typed table (nulls are invalid)."""

    def num(c):
        col = table.column(c)
        ok = np.asarray(col.is_valid(), dtype=bool) if col.null_count else None
        arr = col.fill_null(0).to_numpy() if col.null_count else col.to_numpy()
        return arr, ok

    ok = np.ones(table.num_rows, dtype=bool)
    for col, t in columns(kind).items():
        if t == "str":
            ok &= np.asarray(pc.fill_null(pc.greater(pc.utf8_length(table.column(col)), 0), False), dtype=bool)
            continue
        arr, valid = num(col)
        if valid is not None:
            ok &= valid
        if t == "float":
            ok &= np.isfinite(arr)
    ts, _ = num("timestamp")
    tz, _ = num("tz_offset")
    ok &= (ts > 0) & (np.abs(tz) <= TZ_LIMIT_MIN)
    if kind is FeatureKind.sleep:
        dur, _ = num("duration_s")
        ok &= (dur > 0) & (dur % 30 == 0)
        ok &= np.asarray(pc.fill_null(pc.is_in(table.column("stage"), value_set=pa.array(SLEEP_STAGES)), False),
                         dtype=bool)
    elif kind is FeatureKind.heart:
        ok &= num("bpm")[0] > 0
    elif kind is FeatureKind.steps:
        ok &= num("steps")[0] >= 0
    elif kind is FeatureKind.gps:
        ok &= (np.abs(num("lat")[0]) <= 90) & (np.abs(num("lon")[0]) <= 180)
    elif kind is FeatureKind.light:
        ok &= num("lux")[0] >= 0
    elif kind in (FeatureKind.callLog, FeatureKind.sociabilityCallLog):
        ok &= num("duration_s")[0] >= 0
    return ok


def _datetime_to_ms(values: pd.Series, tz: pd.Series | None) -> pd.Series:
    """ISO datetimes to epoch ms; naive values are local time at ``tz`` minutes from UTC."""
    values = values.astype(str).str.strip()
    aware = values.str.contains(r"(?:Z|[+-]\d\d:?\d\d)$", regex=True).to_numpy()
    out = pd.Series(np.nan, index=values.index)
    if aware.any():
        dt = pd.to_datetime(values[aware], errors="coerce", utc=True, format="mixed")
        out[aware] = (dt.astype("int64") // 10**6).where(dt.notna())
    if (~aware).any():
        dt = pd.to_datetime(values[~aware], errors="coerce", format="mixed")
        ms = dt.astype("int64") // 10**6
        if tz is not None:
            ms = ms - tz[~aware].astype(float) * 60_000
        out[~aware] = ms.where(dt.notna())
    return out


def _header(data: bytes) -> list[str]:
    first = data.split(b"\n", 1)[0].decode("utf-8", "replace").strip().lstrip("﻿")
    return [h.strip().strip('"') for h in first.split(",")] if first else []


def parse_raw_table(kind, data: bytes, default_tz: int = 0) -> tuple[pa.Table, int]:
    """Parse one raw CSV into a typed arrow table in schema column order.

    Returns ``(table, dropped)``: rows that are short, non-numeric or violate a
    record invariant are skipped and counted. Only a missing timestamp column
    or an unknown kind is fatal.
    """
    kind = as_kind(kind)
    schema = columns(kind)
    head = _header(data)
    if "timestamp" not in head and "datetime" not in head:
        raise MissingTimestampColumn(f"{kind.value}: header {head!r}")
    missing = [c for c in schema if c not in head and c not in ("timestamp", "tz_offset")]
    if missing:
        raise SchemaError(f"{kind.value}: missing column {missing[0]}")

    table, bad = None, 0
    if "timestamp" in head:
        table, bad = _read_fast(data, [c for c in schema if c in head], schema)
    if table is None:
        table, bad = _read_slow(data, head, schema, default_tz)
    n_in = table.num_rows
    if "tz_offset" not in table.column_names:
        table = table.append_column("tz_offset", pa.array(np.full(n_in, default_tz, dtype="int64")))
    table = table.select(list(schema))
    ok = _valid_mask(kind, table)
    if not ok.all():
        table = table.filter(pa.array(ok))
    dropped = bad + n_in - table.num_rows
    if dropped:
        logger.debug("%s: dropped %d malformed rows", kind.value, dropped)
    return table, dropped


def _read_fast(data: bytes, wanted: list[str], schema: dict[str, str]):
    bad = 0

    def _skip(row):
        nonlocal bad
        bad += 1
        return "skip"

    conv = pacsv.ConvertOptions(column_types={c: _ARROW[schema[c]] for c in wanted}, include_columns=wanted,
                                strings_can_be_null=False)
    try:
        # the row handler is a Python callback; keep the common path free of it
        return pacsv.read_csv(pa.BufferReader(data), convert_options=conv), 0
    except (pa.ArrowInvalid, pa.ArrowTypeError):
        pass
    try:
        table = pacsv.read_csv(pa.BufferReader(data), parse_options=pacsv.ParseOptions(invalid_row_handler=_skip),
                               convert_options=conv)
        return table, bad
    except (pa.ArrowInvalid, pa.ArrowTypeError):
        return None, 0


def _read_slow(data: bytes, head: list[str], schema: dict[str, str], default_tz: int = 0):
    """Row-tolerant pandas path: short rows, unparseable numbers, ``datetime`` stamps."""
    bad = 0

    def _skip(line):
        nonlocal bad
        bad += 1
        return None

    ts_col = "timestamp" if "timestamp" in head else "datetime"
    wanted = [c for c in schema if c in head] + ([ts_col] if ts_col == "datetime" else [])
    df = pd.read_csv(io.BytesIO(data), dtype=str, keep_default_na=False, usecols=wanted,
                     on_bad_lines=_skip, engine="python")
    # short rows arrive padded with NaN under dtype=str; treat them as malformed
    short = df.isna().any(axis=1).to_numpy()
    df = df[~short]
    bad += int(short.sum())
    if ts_col == "datetime":
        tz = (pd.to_numeric(df["tz_offset"], errors="coerce") if "tz_offset" in df
              else pd.Series(default_tz, index=df.index))
        df["timestamp"] = _datetime_to_ms(df.pop("datetime"), tz)
    arrays, names = [], []
    for col in schema:
        if col not in df:
            continue
        t = schema[col]
        if t == "str":
            arrays.append(pa.array(df[col].astype(str).tolist(), type=pa.string()))
        else:
            vals = pd.to_numeric(df[col], errors="coerce")
            if t == "int":
                # non-integral values are malformed, not truncated
                vals = vals.where(vals == np.floor(vals))
            arrays.append(pa.array(vals.to_numpy(float), type=pa.float64(), from_pandas=True).cast(_ARROW[t],
                                                                                               safe=False))
        names.append(col)
    return pa.table(arrays, names=names), bad


def parse_raw_csv(kind, data: bytes, default_tz: int = 0) -> tuple[pd.DataFrame, int]:
    """Parse one raw CSV into a typed frame; see :func:`parse_raw_table`."""
    table, dropped = parse_raw_table(kind, data, default_tz)
    return _to_frame(table, columns(kind)), dropped


def _to_frame(table: pa.Table, schema: dict[str, str]) -> pd.DataFrame:
    if table.num_rows == 0:
        return pd.DataFrame({c: pd.Series(dtype=_pandas_dtype(t)) for c, t in schema.items()})
    return table.to_pandas()


def patch_timestamps(df):
    """Convert second-resolution timestamps (< 1e11) to milliseconds (frame or arrow table)."""
    if len(df) == 0:
        return df
    if isinstance(df, pa.Table):
        ts = df.column("timestamp").to_numpy()
        small = ts < SECONDS_THRESHOLD
        if not small.any():
            return df
        i = df.column_names.index("timestamp")
        return df.set_column(i, "timestamp", pa.array(np.where(small, ts * 1000, ts).astype("int64")))
    ts = df["timestamp"].to_numpy()
    small = ts < SECONDS_THRESHOLD
    if not small.any():
        return df
    out = df.copy()
    out["timestamp"] = np.where(small, ts * 1000, ts).astype("int64")
    return out


def to_csv_bytes(df, cols: list[str] | None = None) -> bytes:
    """Serialize a typed frame or arrow table; header unquoted, values unquoted."""
    if isinstance(df, pa.Table):
        cols = list(cols or df.column_names)
        table = df.select(cols)
    else:
        cols = list(cols or df.columns)
        table = None
    head = (",".join(cols) + "\n").encode()
    if len(df) == 0:
        return head
    if table is None:
        table = pa.Table.from_pandas(df[cols], preserve_index=False)
    buf = pa.BufferOutputStream()
    try:
        pacsv.write_csv(table, buf, write_options=pacsv.WriteOptions(include_header=False, quoting_style="none"))
    except pa.ArrowInvalid:
        # a value needs quoting
        return table.to_pandas().to_csv(index=False, lineterminator="\n").encode()
    return head + buf.getvalue().to_pybytes()


def sort_table(table: pa.Table) -> tuple[pa.Table, int]:
    """Sort by timestamp, ties broken by the remaining columns in order; drop exact duplicates.

    Returns ``(table, duplicates_removed)``.
    """
    n = table.num_rows
    if n < 2:
        return table, 0
    ts = table.column("timestamp").to_numpy()
    if (np.diff(ts) > 0).all():
        return table, 0
    order = pc.sort_indices(table, sort_keys=[(c, "ascending") for c in table.column_names])
    table = table.take(order)
    same = np.ones(n - 1, dtype=bool)
    for c in table.column_names:
        col = table.column(c)
        same &= np.asarray(pc.equal(col.slice(1), col.slice(0, n - 1)).to_numpy(zero_copy_only=False), dtype=bool)
    if not same.any():
        return table, 0
    keep = np.concatenate(([True], ~same))
    return table.filter(pa.array(keep)), int(same.sum())


def sort_rows(df: pd.DataFrame) -> pd.DataFrame:
    """Frame version of :func:`sort_table`."""
    if df.empty:
        return df.reset_index(drop=True)
    table, _ = sort_table(pa.Table.from_pandas(df, preserve_index=False))
    return table.to_pandas()


def local_ms(df: pd.DataFrame) -> np.ndarray:
    return df["timestamp"].to_numpy(dtype="int64") + df["tz_offset"].to_numpy(dtype="int64") * 60_000


def day_index(df: pd.DataFrame) -> np.ndarray:
    return local_ms(df) // MS_PER_DAY


def day_to_date(day: int | np.ndarray):
    """Days since the epoch -> ISO date string(s)."""
    if np.ndim(day) == 0:
        return str(np.datetime64(int(day), "D"))
    return np.datetime_as_string(np.asarray(day, dtype="int64").astype("datetime64[D]"))


def date_to_day(date: str) -> int:
    return int(np.datetime64(date, "D").astype("int64"))


def read_typed_table(kind, data: bytes, extra: dict[str, str] | None = None) -> pa.Table:
    """Read a CSV this package wrote (stages 2+); no validation, types from the schema."""
    kind = as_kind(kind)
    schema = {**columns(kind), **(extra or {})}
    types = {c: _ARROW[t] for c, t in schema.items()}
    if not data.strip():
        return pa.table({c: pa.array([], type=t) for c, t in types.items()})
    table = pacsv.read_csv(pa.BufferReader(data), convert_options=pacsv.ConvertOptions(
        column_types=types, strings_can_be_null=False))
    for c, t in types.items():
        if c not in table.column_names:
            table = table.append_column(c, pa.nulls(table.num_rows, type=t))
    return table


def read_typed_csv(kind, data: bytes, extra: dict[str, str] | None = None) -> pd.DataFrame:
    """Frame version of :func:`read_typed_table`."""
    schema = {**columns(kind), **(extra or {})}
    return _to_frame(read_typed_table(kind, data, extra), schema)

"""Six-stage batch pipeline over a study root.

1. decrypt     ``<study>/``        -> ``decrypted/``    one CSV per uploaded chunk
2. patch       ``decrypted/``      -> ``1.decrypted/``  typed rows, seconds -> ms
3. concatenate ``1.decrypted/``    -> ``2.decrypted/``  one table per (participant, kind)
4. fix values  ``2.decrypted/``    -> ``3.decrypted/``  clamp lux, dedupe, app groups
5. summarize   ``3.decrypted/``    -> ``4.decrypted/``  hourly/daily stats per family
6. combine     ``4.decrypted/``    -> ``5.decrypted/``  daily vectors per participant + study-wide

Stages 1-2 are incremental per file (skip when the output exists). Stages
3-6 recompute a unit only when its input fingerprint changed, recorded in
``.state/``. All writes are atomic and every output is a pure function of
its inputs, so worker count and enumeration order never change a byte.
"""

from __future__ import annotations

import gzip
import hashlib
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import pandas as pd
import pyarrow as pa
import pyarrow.compute as pc

from .config import StudyConfig
from .crypto import FILE_EXT, CryptoError, decrypt_chunk
from .features.apps import classify_many, default_mapping
from .features.common import Summary
from .features.manifest import Manifest, combine_daily, default_manifest, reconciliation_markdown
from .schemas import (FeatureKind, SchemaError, day_to_date, parse_raw_table, patch_timestamps, read_typed_csv,
                      read_typed_table, sort_table, to_csv_bytes)
from .store import LayoutError, Registry, StudyLayout, UnknownParticipant, atomic_write, load_private_key, \
    scan_new_files
from .summarize import summarize_participant

logger = logging.getLogger(__name__)

LUX_MAX = 65535.0
TAPS_EXTRA = {"app_group": "str"}
GZIP_LEVEL = 6
FIXED_KINDS = (FeatureKind.light, FeatureKind.tapsLog)


@dataclass
class StageReport:
    stage: int
    files_in: int = 0
    files_out: int = 0
    rows_dropped: int = 0
    duplicates_removed: int = 0
    files_skipped: int = 0
    duration_s: float = 0.0

    def line(self) -> str:
        return (f"stage {self.stage}: in={self.files_in} out={self.files_out} dropped={self.rows_dropped} "
                f"dups={self.duplicates_removed} skipped={self.files_skipped} {self.duration_s:.2f}s")


def gzip_bytes(data: bytes) -> bytes:
    # mtime=0 keeps the archive bytes a function of the content only
    return gzip.compress(data, compresslevel=GZIP_LEVEL, mtime=0)


def frame_to_csv(df: pd.DataFrame) -> bytes:
    return df.to_csv(index=False, na_rep="nan", lineterminator="\n").encode()


def _extra(kind: FeatureKind, stage: int) -> dict:
    return TAPS_EXTRA if kind is FeatureKind.tapsLog and stage >= 4 else {}


# --- pure unit operations -------------------------------------------------------

def concat_tables(kind, blobs: list[bytes]) -> tuple[pa.Table, int, int]:
    """Merge chunk CSVs of one (participant, kind).

    Returns ``(table, rows_dropped, duplicates_removed)``. Input order does not
    matter: rows end up sorted by timestamp then by the remaining columns.
    A chunk cut off mid-write loses its incomplete last line.
    """
    kind = FeatureKind(kind)
    if not blobs:
        return read_typed_table(kind, b""), 0, 0
    dropped = 0
    heads, bodies = set(), []
    for b in blobs:
        head, _, body = b.partition(b"\n")
        heads.add(head.strip())
        if body and not body.endswith(b"\n"):
            body = body[: body.rfind(b"\n") + 1]
            dropped += 1
        bodies.append(body)
    if len(heads) == 1:
        table, d = parse_raw_table(kind, blobs[0].partition(b"\n")[0] + b"\n" + b"".join(bodies))
        dropped += d
    else:
        parts = []
        for b in blobs:
            t, d = parse_raw_table(kind, b)
            parts.append(t)
            dropped += d
        table = pa.concat_tables(parts)
    table, dups = sort_table(table)
    return table, dropped, dups


def concat_feature_files(kind, blobs: list[bytes]) -> tuple[pd.DataFrame, int, int]:
    """Frame version of :func:`concat_tables`."""
    table, dropped, dups = concat_tables(kind, blobs)
    return _frame(kind, table), dropped, dups


def _frame(kind, table: pa.Table) -> pd.DataFrame:
    if table.num_rows:
        return table.to_pandas()
    return read_typed_csv(kind, b"", {c: "str" for c in table.column_names if c == "app_group"})


def fix_table(kind, table: pa.Table, mapping=None) -> tuple[pa.Table, int]:
    """Clamp light, drop duplicates and add the tap app group. Returns ``(table, duplicates_removed)``."""
    kind = FeatureKind(kind)
    if kind is FeatureKind.light and table.num_rows:
        i = table.column_names.index("lux")
        table = table.set_column(i, "lux", pc.min_element_wise(pc.max_element_wise(table.column("lux"), 0.0),
                                                               LUX_MAX))
    if kind is FeatureKind.tapsLog and "app_group" not in table.column_names:
        apps = table.column("app").to_pylist()
        table = table.append_column("app_group", pa.array(classify_many(mapping, apps) if apps else [],
                                                          type=pa.string()))
    return sort_table(table)


def fix_values(kind, df: pd.DataFrame, mapping=None) -> tuple[pd.DataFrame, int]:
    """Frame version of :func:`fix_table`."""
    table, dups = fix_table(kind, pa.Table.from_pandas(df, preserve_index=False), mapping)
    return _frame(kind, table), dups


# --- fingerprints ----------------------------------------------------------------

def _fingerprint(paths: list[Path]) -> str:
    h = hashlib.sha256()
    for p in sorted(paths):
        st = p.stat()
        h.update(f"{p.name}\0{st.st_size}\0{st.st_mtime_ns}\n".encode())
    return h.hexdigest()


class _State:
    def __init__(self, layout: StudyLayout, stage: int):
        self.path = layout.state_dir / f"stage{stage}.json"
        self.data = json.loads(self.path.read_text()) if self.path.exists() else {}
        self.dirty = False

    def unchanged(self, key: str, fp: str, outputs: list[Path]) -> bool:
        return self.data.get(key) == fp and all(o.exists() for o in outputs)

    def set(self, key: str, fp: str):
        self.data[key] = fp
        self.dirty = True

    def save(self):
        if self.dirty:
            atomic_write(self.path, (json.dumps(self.data, indent=1, sort_keys=True) + "\n").encode())


def _map(fn, items, jobs: int):
    if jobs <= 1 or len(items) <= 1:
        return [fn(*it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(_star, [(fn, it) for it in items]))


def _star(arg):
    fn, it = arg
    return fn(*it)


# --- stages -------------------------------------------------------------------------

def _decrypt_one(priv: bytes, src: str, dst: str) -> tuple[int, int]:
    try:
        data = decrypt_chunk(Path(src).read_bytes(), priv)
    except (CryptoError, OSError) as exc:
        logger.warning("decrypt %s: %s", src, exc)
        return 0, 1
    atomic_write(Path(dst), data)
    return 1, 0


def stage_decrypt(layout: StudyLayout, registry: Registry, jobs: int = 1) -> StageReport:
    rep = StageReport(1)
    todo = scan_new_files(layout, 1)
    rep.files_in = len(todo)
    keys: dict[str, bytes | None] = {}
    items = []
    for pid, kind, path in todo:
        if pid not in keys:
            try:
                keys[pid] = load_private_key(layout, pid)
            except UnknownParticipant:
                keys[pid] = None
        if keys[pid] is None:
            rep.files_skipped += 1
            continue
        dst = layout.stage(1) / pid / kind.value / (path.name[: -len(FILE_EXT)] + ".csv")
        items.append((keys[pid], str(path), str(dst)))
    for ok, bad in _map(_decrypt_one, items, jobs):
        rep.files_out += ok
        rep.files_skipped += bad
    return rep


def _patch_one(kind: str, src: str, dst: str, tz: int) -> tuple[int, int, int]:
    try:
        table, dropped = parse_raw_table(kind, Path(src).read_bytes(), default_tz=tz)
    except SchemaError as exc:
        logger.warning("patch %s: %s", src, exc)
        return 0, 0, 1
    atomic_write(Path(dst), to_csv_bytes(patch_timestamps(table)))
    return 1, dropped, 0


def _stage_files(root: Path):
    """(pid, kind, path) for per-chunk CSVs under a stage directory, sorted."""
    out = []
    if not root.is_dir():
        return out
    for pdir in sorted(p for p in root.iterdir() if p.is_dir()):
        for kdir in sorted(k for k in pdir.iterdir() if k.is_dir()):
            try:
                kind = FeatureKind(kdir.name)
            except ValueError:
                continue
            for f in sorted(kdir.glob("*.csv")):
                out.append((pdir.name, kind, f))
    return out


def stage_patch(layout: StudyLayout, registry: Registry, cfg: StudyConfig, jobs: int = 1) -> StageReport:
    rep = StageReport(2)
    items = []
    for pid, kind, f in _stage_files(layout.stage(1)):
        dst = layout.stage(2) / pid / kind.value / f.name
        if dst.exists():
            continue
        tz = registry.participants[pid].tz_offset_min if pid in registry else cfg.tz_offset_min
        items.append((kind.value, str(f), str(dst), tz))
    rep.files_in = len(items)
    for ok, dropped, bad in _map(_patch_one, items, jobs):
        rep.files_out += ok
        rep.rows_dropped += dropped
        rep.files_skipped += bad
    return rep


def _concat_one(kind: str, srcs: list[str], dst: str) -> tuple[int, int]:
    blobs = [Path(s).read_bytes() for s in srcs]
    table, dropped, dups = concat_tables(kind, blobs)
    atomic_write(Path(dst), to_csv_bytes(table))
    return dropped, dups


def stage_concat(layout: StudyLayout, jobs: int = 1) -> StageReport:
    rep = StageReport(3)
    state = _State(layout, 3)
    groups: dict[tuple[str, str], list[Path]] = {}
    for pid, kind, f in _stage_files(layout.stage(2)):
        groups.setdefault((pid, kind.value), []).append(f)
    items, keys = [], []
    for (pid, kind), files in sorted(groups.items()):
        dst = layout.stage(3) / pid / f"{kind}.csv"
        key = f"{pid}/{kind}"
        fp = _fingerprint(files)
        if state.unchanged(key, fp, [dst]):
            continue
        rep.files_in += len(files)
        items.append((kind, [str(f) for f in files], str(dst)))
        keys.append((key, fp))
    for (key, fp), (dropped, dups) in zip(keys, _map(_concat_one, items, jobs)):
        rep.files_out += 1
        rep.rows_dropped += dropped
        rep.duplicates_removed += dups
        state.set(key, fp)
    state.save()
    return rep


def _fix_one(kind: str, src: str, dst: str) -> int:
    k = FeatureKind(kind)
    data = Path(src).read_bytes()
    if k not in FIXED_KINDS:
        # stage 3 already sorted and deduplicated; nothing else to change
        atomic_write(Path(dst), data)
        return 0
    out, dups = fix_table(k, read_typed_table(k, data), default_mapping())
    atomic_write(Path(dst), to_csv_bytes(out))
    return dups


def _tables(root: Path) -> dict[str, list[tuple[FeatureKind, Path]]]:
    out: dict[str, list] = {}
    if not root.is_dir():
        return out
    for pdir in sorted(p for p in root.iterdir() if p.is_dir()):
        for f in sorted(pdir.glob("*.csv")):
            try:
                out.setdefault(pdir.name, []).append((FeatureKind(f.stem), f))
            except ValueError:
                continue
    return out


def stage_fix(layout: StudyLayout, jobs: int = 1) -> StageReport:
    rep = StageReport(4)
    state = _State(layout, 4)
    items, keys = [], []
    for pid, entries in _tables(layout.stage(3)).items():
        for kind, f in entries:
            dst = layout.stage(4) / pid / f.name
            key = f"{pid}/{kind.value}"
            fp = _fingerprint([f])
            if state.unchanged(key, fp, [dst]):
                continue
            rep.files_in += 1
            items.append((kind.value, str(f), str(dst)))
            keys.append((key, fp))
    for (key, fp), dups in zip(keys, _map(_fix_one, items, jobs)):
        rep.files_out += 1
        rep.duplicates_removed += dups
        state.set(key, fp)
    state.save()
    return rep


def load_stage4_tables(layout: StudyLayout, pid: str) -> dict[FeatureKind, pd.DataFrame]:
    out = {}
    for kind, f in _tables(layout.stage(4)).get(pid, []):
        out[kind] = read_typed_csv(kind, f.read_bytes(), _extra(kind, 4))
    return out


def _summary_frames(s: Summary) -> dict[str, pd.DataFrame]:
    out = {}
    for gran, df in (("hourly", s.hourly), ("daily", s.daily)):
        if df is None:
            continue
        df = df.copy()
        df.insert(0, "date", day_to_date(df.pop("day").to_numpy()) if len(df) else pd.Series(dtype=object))
        out[gran] = df
    return out


def _summarize_one(root: str, study: str, pid: str, cfg_dict: dict) -> int:
    layout = StudyLayout(Path(root), study)
    cfg = StudyConfig.from_dict(cfg_dict)
    tables = load_stage4_tables(layout, pid)
    out_dir = layout.stage(5) / pid
    n = 0
    written = set()
    for family, summ in summarize_participant(tables, cfg, default_mapping()).items():
        for gran, df in _summary_frames(summ).items():
            name = f"{family}.{gran}.csv.gz"
            atomic_write(out_dir / name, gzip_bytes(frame_to_csv(df)))
            written.add(name)
            n += 1
    if out_dir.is_dir():
        for stale in out_dir.glob("*.csv.gz"):
            if stale.name not in written:
                stale.unlink()
    return n


def stage_summarize(layout: StudyLayout, cfg: StudyConfig, jobs: int = 1) -> StageReport:
    rep = StageReport(5)
    state = _State(layout, 5)
    items, keys = [], []
    for pid, entries in _tables(layout.stage(4)).items():
        files = [f for _, f in entries]
        fp = hashlib.sha256((_fingerprint(files) + json.dumps(cfg.to_dict(), sort_keys=True)).encode()).hexdigest()
        if state.unchanged(pid, fp, [layout.stage(5) / pid]):
            continue
        rep.files_in += len(files)
        items.append((str(layout.root), layout.study, pid, cfg.to_dict()))
        keys.append((pid, fp))
    for (key, fp), n in zip(keys, _map(_summarize_one, items, jobs)):
        rep.files_out += n
        state.set(key, fp)
    state.save()
    return rep


def load_summaries(layout: StudyLayout, pid: str) -> tuple[dict[str, pd.DataFrame], dict[str, pd.DataFrame]]:
    """Stage-5 frames for one participant as ``(hourly, daily)`` dicts keyed by family, with a ``day`` column."""
    hourly, daily = {}, {}
    base = layout.stage(5) / pid
    if not base.is_dir():
        return hourly, daily
    for f in sorted(base.glob("*.csv.gz")):
        family, gran = f.name[: -len(".csv.gz")].rsplit(".", 1)
        df = pd.read_csv(f, keep_default_na=True, na_values=["nan"])
        dates = df.pop("date")
        df.insert(0, "day", (pd.to_datetime(dates).to_numpy().astype("datetime64[D]").astype("int64")
                             if len(df) else np.zeros(0, dtype="int64")))
        (hourly if gran == "hourly" else daily)[family] = df
    return hourly, daily


def participant_vectors(layout: StudyLayout, pid: str, manifest: Manifest) -> pd.DataFrame:
    hourly, daily = load_summaries(layout, pid)
    days = [d for frames in (hourly, daily) for df in frames.values() for d in df["day"].tolist()]
    if not days:
        return pd.DataFrame(columns=["date"] + manifest.columns)
    rng = np.arange(min(days), max(days) + 1)
    vec = combine_daily(manifest, rng, hourly, daily)
    vec.insert(0, "date", day_to_date(rng))
    return vec


def _combine_one(root: str, study: str, pid: str, manifest_json: str) -> int:
    layout = StudyLayout(Path(root), study)
    vec = participant_vectors(layout, pid, Manifest.from_json(manifest_json))
    atomic_write(layout.stage(6) / pid / "daily.csv.gz", gzip_bytes(frame_to_csv(vec)))
    return 1


def stage_combine(layout: StudyLayout, manifest: Manifest, jobs: int = 1) -> StageReport:
    rep = StageReport(6)
    state = _State(layout, 6)
    out = layout.stage(6)
    mtext = manifest.to_json()
    items, keys = [], []
    base = layout.stage(5)
    pids = sorted(p.name for p in base.iterdir() if p.is_dir()) if base.is_dir() else []
    for pid in pids:
        files = sorted((base / pid).glob("*.csv.gz"))
        fp = hashlib.sha256((_fingerprint(files) + mtext).encode()).hexdigest()
        if state.unchanged(pid, fp, [out / pid / "daily.csv.gz"]):
            continue
        rep.files_in += len(files)
        items.append((str(layout.root), layout.study, pid, mtext))
        keys.append((pid, fp))
    for (key, fp), n in zip(keys, _map(_combine_one, items, jobs)):
        rep.files_out += n
        state.set(key, fp)
    if items or (pids and not (out / "all.csv.gz").exists()):
        frames = []
        for pid in pids:
            df = pd.read_csv(out / pid / "daily.csv.gz", na_values=["nan"], dtype={"date": str})
            df.insert(0, "participant", pid)
            frames.append(df)
        allv = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(
            columns=["participant", "date"] + manifest.columns)
        atomic_write(out / "all.csv.gz", gzip_bytes(frame_to_csv(allv)))
        atomic_write(out / "manifest.json", mtext.encode())
        atomic_write(out / "manifest-reconciliation.md", reconciliation_markdown(manifest).encode())
        rep.files_out += 3
    state.save()
    return rep


def run_pipeline(layout: StudyLayout, registry: Registry | None = None, manifest: Manifest | None = None,
                 cfg: StudyConfig | None = None, stages=None, jobs: int = 1) -> list[StageReport]:
    """Run stages (all six by default) in order and return their reports."""
    if not layout.root.is_dir():
        raise LayoutError(f"missing study root {layout.root}")
    registry = registry if registry is not None else Registry.load(layout)
    manifest = manifest or default_manifest()
    cfg = cfg or StudyConfig(study=layout.study)
    stages = sorted(set(stages or range(1, 7)))
    reports = []
    for k in stages:
        t0 = time.perf_counter()
        if k == 1:
            rep = stage_decrypt(layout, registry, jobs)
        elif k == 2:
            rep = stage_patch(layout, registry, cfg, jobs)
        elif k == 3:
            rep = stage_concat(layout, jobs)
        elif k == 4:
            rep = stage_fix(layout, jobs)
        elif k == 5:
            rep = stage_summarize(layout, cfg, jobs)
        elif k == 6:
            rep = stage_combine(layout, manifest, jobs)
        else:
            raise ValueError(f"no stage {k}")
        rep.duration_s = time.perf_counter() - t0
        logger.info(rep.line())
        reports.append(rep)
    return reports


def report_dicts(reports: list[StageReport]) -> list[dict]:
    return [asdict(r) for r in reports]

import gzip
import io
import random

import pandas as pd
import pyarrow as pa
import pytest

from phenopipe.pipeline import (LUX_MAX, concat_tables, fix_table, load_summaries, run_pipeline)
from phenopipe.schemas import FeatureKind
from phenopipe.store import StudyLayout
from phenopipe.synthgen import generate

HEAD = b"timestamp,tz_offset,bpm\n"


def test_empty_study_gives_six_zero_reports(tmp_path):
    layout = StudyLayout(tmp_path, "s")
    reps = run_pipeline(layout)
    assert [r.stage for r in reps] == [1, 2, 3, 4, 5, 6]
    assert all(r.files_in == r.files_out == r.rows_dropped == 0 for r in reps)


def test_missing_root(tmp_path):
    from phenopipe.store import LayoutError

    with pytest.raises(LayoutError):
        run_pipeline(StudyLayout(tmp_path / "absent", "s"))


@pytest.fixture(scope="module")
def two_days(tmp_path_factory):
    root = tmp_path_factory.mktemp("two")
    info = generate(root, participants=1, days=2, seed=3, lockdown_day=None)
    layout = StudyLayout(root, info["study"])
    first = run_pipeline(layout)
    return layout, info["participants"][0], first


def test_two_days_give_two_vectors(two_days):
    layout, pid, _ = two_days
    df = pd.read_csv(layout.stage(6) / pid / "daily.csv.gz")
    assert len(df) == 2
    assert len(df.columns) == 1 + 729


def test_all_thirteen_kinds_flow_through(two_days):
    layout, pid, first = two_days
    assert {p.name for p in (layout.stage(4) / pid).iterdir()} == {f"{k.value}.csv" for k in FeatureKind}
    hourly, daily = load_summaries(layout, pid)
    assert set(daily) >= {"sleep", "steps", "heart", "gps-mobility", "callLog", "light", "powerState", "tapsLog",
                          "textsLog", "sociabilityLog", "sociabilityCallLog"}
    assert set(hourly) >= {"accel", "accessibilityLog", "heart", "steps", "light", "powerState", "tapsLog"}
    assert first[0].files_out == 26


def test_second_run_does_nothing(two_days):
    layout, _, _ = two_days
    snap = {p: p.read_bytes() for p in layout.root.rglob("*.gz")}
    again = run_pipeline(layout)
    assert all(r.files_out == 0 for r in again)
    assert {p: p.read_bytes() for p in layout.root.rglob("*.gz")} == snap


def test_overlapping_row_kept_once():
    a = HEAD + b"1000,480,60\n2000,480,61\n"
    b = HEAD + b"2000,480,61\n3000,480,62\n"
    table, dropped, dups = concat_tables("heart", [a, b])
    assert table.column("timestamp").to_pylist() == [1000, 2000, 3000]
    assert dups == 1 and dropped == 0


def test_half_written_line_dropped():
    a = HEAD + b"1000,480,60\n2000,480,61\n3000,48"
    table, dropped, _ = concat_tables("heart", [a])
    assert table.column("timestamp").to_pylist() == [1000, 2000]
    assert dropped == 1


def test_file_order_does_not_matter():
    rnd = random.Random(0)
    blobs = [HEAD + b"".join(b"%d,480,%d\n" % (rnd.randrange(10**6), rnd.randrange(40, 180)) for _ in range(30))
             for _ in range(6)]
    ref = concat_tables("heart", blobs)[0]
    for _ in range(5):
        rnd.shuffle(blobs)
        assert concat_tables("heart", blobs)[0].equals(ref)


def test_lux_clamped():
    t = pa.table({"timestamp": [1, 2], "tz_offset": [0, 0], "lux": [1e15, 300.0]})
    out, _ = fix_table("light", t)
    assert out.column("lux").to_pylist() == [LUX_MAX, 300.0]


def test_taps_get_app_group():
    t = pa.table({"timestamp": [1, 2], "tz_offset": [0, 0], "app": ["com.whatsapp", "com.unknown.foo"],
                  "orientation": [0, 0]})
    out, _ = fix_table("tapsLog", t)
    assert out.column("app_group").to_pylist() == ["social messenger", "android system"]


def test_stage_outputs_are_gzip_deterministic(two_days):
    layout, pid, _ = two_days
    f = layout.stage(5) / pid / "heart.daily.csv.gz"
    raw = f.read_bytes()
    assert raw[4:8] == b"\x00\x00\x00\x00"  # gzip mtime fixed
    df = pd.read_csv(io.BytesIO(gzip.decompress(raw)))
    assert list(df.columns[:1]) == ["date"]

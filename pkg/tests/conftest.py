import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from phenopipe.pipeline import run_pipeline  # noqa: E402
from phenopipe.store import Registry, StudyLayout  # noqa: E402
from phenopipe.synthgen import generate  # noqa: E402

SMALL = {"participants": 3, "days": 35, "seed": 11, "lockdown_day": 20}


@pytest.fixture(scope="session")
def small_study(tmp_path_factory):
    """A generated and fully processed 3 x 35-day study with mock-server fixtures."""
    root = tmp_path_factory.mktemp("small")
    fixtures = root / "fixtures"
    info = generate(root / "study-root", fixtures_dir=fixtures, **SMALL)
    layout = StudyLayout(root / "study-root", info["study"])
    run_pipeline(layout)
    return {"layout": layout, "registry": Registry.load(layout), "pids": info["participants"],
            "fixtures": fixtures, "info": info}


# --- acceptance criteria report --------------------------------------------------------------

_CRITERIA: dict[int, dict] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and not rep.failed):
        return
    number, title = mark.args
    entry = _CRITERIA.setdefault(number, {"title": title, "parts": 0, "failed": [], "notes": []})
    if rep.when == "call":
        entry["parts"] += 1
        entry["notes"] += [v for k, v in item.user_properties if k == "note"]
    if rep.failed:
        entry["failed"].append(item.name)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(_CRITERIA):
        e = _CRITERIA[number]
        status = "FAIL" if e["failed"] else "PASS"
        detail = f" ({', '.join(e['failed'])})" if e["failed"] else ""
        detail += "".join(f"; {n}" for n in e["notes"])
        terminalreporter.write_line(f"criterion {number:2d} {status}  {e['title']}: {e['parts']} check(s){detail}")

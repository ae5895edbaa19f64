import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

# criterion id -> (title, [(test name, outcome, details)])
_CRITERIA: dict[str, tuple[str, list]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        cid, title = marker.args
        details = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
        if rep.skipped and isinstance(rep.longrepr, tuple):
            details = rep.longrepr[2].removeprefix("Skipped: ")
        _CRITERIA.setdefault(cid, (title, []))[1].append((item.name, rep.outcome, details))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for cid in sorted(_CRITERIA, key=lambda c: int(c[1:])):
        title, parts = _CRITERIA[cid]
        outcomes = {o for _, o, _ in parts}
        verdict = "FAIL" if "failed" in outcomes else "SKIP" if outcomes == {"skipped"} else "PASS"
        tr.write_line(f"{cid} {title}: {verdict}")
        for name, result, details in parts:
            tr.write_line(f"    {name}: {result}" + (f" ({details})" if details else ""))

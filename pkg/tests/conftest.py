import os

os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")

import pytest

from pommix.datasets import packaged_odorants


@pytest.fixture(scope="session")
def odorants():
    return packaged_odorants()


# one summary line per acceptance criterion, in criterion order
ACCEPTANCE = {}
_STATUS = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or not (rep.when == "call" or rep.outcome != "passed"):
        return
    detail = "; ".join(v for k, v in item.user_properties if k == "detail")
    if rep.skipped:
        detail = rep.longrepr[2] if isinstance(rep.longrepr, tuple) else str(rep.longrepr)
    elif rep.failed:
        first = (str(call.excinfo.value).strip().splitlines() or ["failed"])[0] if call.excinfo else "failed"
        detail = f"{detail}; {first}" if detail else first
    ACCEPTANCE[marker.args[0]] = (_STATUS[rep.outcome], marker.args[1], detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(ACCEPTANCE):
        status, title, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n} [{status}] {title}: {detail}")

import numpy as np
import pytest

from vib2ecg import cardiosynth as cs


@pytest.fixture(scope="session")
def short_recording():
    """30 s of default-profile synthetic data with its annotations."""
    return cs.gen_paired_recording(cs.SubjectProfile(rng_seed=11), duration=30.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_criteria = {}


def pytest_runtest_logreport(report):
    mark = getattr(report, "criterion", None)
    if mark is None:
        return
    # a failing setup or teardown also sinks the criterion; skips come from setup or call
    if report.when == "call" or report.outcome != "passed":
        state = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[report.outcome]
        prev = _criteria.get(mark[0], (None, None, ""))[1]
        if prev not in ("FAIL",):
            notes = "; ".join(f"{k}={v}" for k, v in report.user_properties)
            _criteria[mark[0]] = (mark[1], state, notes)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    mark = item.get_closest_marker("criterion")
    if mark is not None:
        outcome.get_result().criterion = mark.args


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, state, notes = _criteria[number]
        line = f"criterion {number:>2}: {state}  {title}"
        terminalreporter.write_line(line + (f"  [{notes}]" if notes else ""))

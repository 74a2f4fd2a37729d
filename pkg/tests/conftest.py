import re
from collections import OrderedDict

CRITERIA = OrderedDict([
    (1, "GRPO math suite"),
    (2, "gradient fidelity"),
    (3, "toy convergence"),
    (4, "algorithm differentiation"),
    (5, "reward suite"),
    (6, "movement labeler"),
    (7, "dataset generation"),
    (8, "KL estimator"),
    (9, "bench harness end-to-end"),
    (10, "judge validation"),
    (11, "prompt fidelity"),
])

_outcomes: dict[int, list[str]] = {}
_CRIT = re.compile(r"test_acceptance\.py::test_c(\d+)_")


def pytest_runtest_logreport(report):
    m = _CRIT.search(report.nodeid)
    if m is None:
        return
    n = int(m.group(1))
    if report.when == "call" or report.outcome != "passed":
        _outcomes.setdefault(n, []).append(report.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n, name in CRITERIA.items():
        results = _outcomes.get(n)
        if not results:
            status = "NOT RUN"
        elif all(r == "passed" for r in results):
            status = "PASS"
        else:
            status = "FAIL"
        terminalreporter.write_line(f"criterion {n:2d} {name}: {status}")

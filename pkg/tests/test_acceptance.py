"""The nine acceptance criteria, run once at their stated tolerances.

One PASS/FAIL line per criterion is printed in the terminal summary (see conftest.py).
"""
import time

import pytest

from roap import checks
from roap.config import RunConfig

REPORT: list[str] = []


@pytest.fixture(scope="module")
def outcomes():
    t0 = time.perf_counter()
    results, _ = checks.run_checks(RunConfig())
    total = time.perf_counter() - t0
    by_prefix = {r.name.split()[0]: r for r in results if r.name.startswith("C")}
    REPORT.extend(by_prefix[f"C{i}"].line() for i in range(1, 10))
    REPORT.append(f"full check suite: {total:.1f}s (budget {checks.SUITE_BUDGET_S:.0f}s)")
    return by_prefix


@pytest.mark.parametrize("criterion", [f"C{i}" for i in range(1, 10)])
def test_criterion(outcomes, criterion):
    res = outcomes[criterion]
    print(res.line())
    assert res.passed, res.line()


def test_module_checks_pass():
    results, _ = checks.run_checks(RunConfig(), "geometry")
    results += checks.run_checks(RunConfig(), "ingest")[0]
    assert results and all(r.passed for r in results), [r.line() for r in results]

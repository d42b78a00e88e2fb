"""The sixteen acceptance criteria, one test each.

The battery runs once per session (about half an hour on one core).  Each
test prints its ``PASS``/``FAIL`` line; the session summary repeats all of
them.  Run ``python tests/test_acceptance.py`` for the lines alone.
"""

from __future__ import annotations

import pytest

from ibflab.acceptance import run_battery

# wall-clock budgets in seconds, covering the replicas each check consumes
BUDGETS = {
    1: 1, 2: 1, 3: 5, 4: 1, 5: 120, 6: 120, 7: 30, 8: 60,
    9: 30 * 60, 12: 45 * 60, 14: 10 * 60, 15: 30 * 60, 16: 1,
}
LINES: list[str] = []


@pytest.fixture(scope="module")
def battery():
    res = run_battery(0)
    LINES.extend(c.line() for c in res.criteria)
    return res


def elapsed(res, number: int) -> float:
    crit = {c.number: c for c in res.criteria}[number]
    ens = res.ensemble.seconds
    extra = {9: ens["canonical"], 12: ens["canonical"], 15: ens["big_R"]}.get(number, 0.0)
    return crit.seconds + extra


@pytest.mark.slow
@pytest.mark.parametrize("number", range(1, 17))
def test_criterion(battery, number):
    crit = {c.number: c for c in battery.criteria}[number]
    print(crit.line())
    assert crit.passed, f"{crit.line()}: {crit.detail}"
    if number in BUDGETS:
        took = elapsed(battery, number)
        assert took < BUDGETS[number], f"#{number} took {took:.1f}s, budget {BUDGETS[number]}s"


if __name__ == "__main__":
    for c in run_battery(0).criteria:
        print(c.line(), flush=True)

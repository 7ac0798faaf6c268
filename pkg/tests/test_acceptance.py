"""End-to-end acceptance criteria; each test prints one PASS/FAIL line."""

import pytest

from idepde.acceptance import CRITERIA, run_criterion

# wall-clock limits in seconds, where one applies
RUNTIME_LIMIT = {5: 20.0, 8: 10.0}


@pytest.mark.parametrize("number", range(1, len(CRITERIA) + 1), ids=lambda n: f"C{n}")
def test_criterion(number, capsys):
    res = run_criterion(number, seed=0)
    with capsys.disabled():
        print("\n" + res.line())
    assert res.passed, res.line()
    if number == 1:
        assert res.details["open_loop_runtime"] < 10.0
        assert res.details["mean_recirculation_runtime"] < 10.0
    if number == 4:
        assert res.details["check_runtime"] < 5.0
    if number in RUNTIME_LIMIT:
        assert res.runtime < RUNTIME_LIMIT[number]

"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest -s tests/test_acceptance.py`` to see the lines, or use
``adaptmeas verify``.
"""

import pytest

from adaptmeas.acceptance import CHECKS

TRIALS = 100_000
SEED = 0

KWARGS = {
    5: {"trials": TRIALS, "seed": SEED},
    7: {"trials": TRIALS, "seed": SEED},
    8: {"trials": TRIALS, "seed": SEED},
    10: {"seed": SEED},
}


@pytest.mark.parametrize("number", sorted(CHECKS))
def test_criterion(number):
    crit = CHECKS[number](**KWARGS.get(number, {}))
    print(crit.line())
    for note in crit.notes:
        print("    " + str(note))
    assert crit.number == number
    assert crit.passed, crit.line()

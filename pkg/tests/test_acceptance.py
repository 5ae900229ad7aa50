"""The eleven acceptance criteria at their stated tolerances.

Each test prints its PASS/FAIL line (visible with ``pytest -s`` or in the
captured output of a failure); ``test_report`` prints all of them together.
"""

import pytest

from kinetic_einstein import acceptance

SEED = 0


@pytest.mark.parametrize("criterion", acceptance.CRITERIA, ids=lambda f: f.__name__)
def test_criterion(criterion):
    result = criterion(SEED)
    print(result.line())
    assert result.passed, result.line()


def test_report(capsys):
    lines = []
    results = acceptance.run_all(SEED, report=lines.append)
    with capsys.disabled():
        print()
        for line in lines:
            print(line)
    assert len(results) == 11
    assert [r.number for r in results] == list(range(1, 12))

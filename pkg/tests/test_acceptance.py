"""All acceptance criteria at their stated tolerances; one summary line per criterion."""

import pytest

from mtbubble import acceptance

RESULTS: dict = {}


@pytest.mark.slow
@pytest.mark.parametrize("number", sorted(acceptance.CRITERIA))
def test_criterion(number):
    res = acceptance.CRITERIA[number]()
    RESULTS[number] = res
    print(res.line())
    if res.status == acceptance.NOT_REPRODUCIBLE:
        # allowed only with the measurements that show why
        assert res.measured.get("evidence"), "not-reproducible verdict without evidence"
        assert res.notes
        return
    failing = [k for k, ok in res.checks.items() if not ok]
    assert res.status == acceptance.PASS, f"criterion {number} failing checks: {failing}"

"""The eleven acceptance criteria at their stated tolerances.

Criteria 9 and 10 fail at the stated parameters; the reasons and the
measured numbers are in the README.
"""

import pytest

from heisenberg_transport.acceptance import CRITERIA, run_criterion


@pytest.mark.parametrize("k", sorted(CRITERIA), ids=[f"criterion_{k:02d}" for k in sorted(CRITERIA)])
def test_criterion(k, acceptance_log):
    res = run_criterion(k)
    acceptance_log.append(res.line())
    print(res.line())
    assert res.passed, res.line()

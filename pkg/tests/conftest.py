import functools

import numpy as np
import pytest
from hypothesis import settings

import spkde.qp as qp

import verdicts

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")



def _checked(solve):
    """Wrap the solver so every solve made in the suite has its trace checked."""

    @functools.wraps(solve)
    def checked_solve(*args, **kwargs):
        report = solve(*args, **kwargs)
        trace = np.asarray(report.objective_trace)
        slack = 1e-12 * np.maximum(1.0, np.abs(trace[:-1]))
        assert np.all(np.diff(trace) <= slack), "objective trace increased"
        verdicts.SOLVES.append((report.iterations, report.kkt_residual))
        return report

    checked_solve.checked = True
    return checked_solve


if not getattr(qp.solve_pgd, "checked", False):
    qp.solve_pgd = _checked(qp.solve_pgd)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if verdicts.LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(verdicts.LINES):
            terminalreporter.write_line(verdicts.LINES[number])

import numpy as np
import pytest
from hypothesis import settings

from cohortshift.cohort import Cohort
from cohortshift.simulator import CohortSpec

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


def make_cohort(time, event, X=None, name="c", names=None):
    time = np.asarray(time, dtype=float)
    if X is None:
        X = np.zeros((time.size, 0))
    X = np.asarray(X, dtype=float).reshape(time.size, -1)
    names = names or [f"x{j + 1}" for j in range(X.shape[1])]
    return Cohort(name=name, covariate_names=names, ids=[f"{name}{i}" for i in range(time.size)], X=X, time=time, event=event)


def simple_spec(name="s", n=500, mean=(0.0, 0.0), beta=(0.5, -0.3), **kw):
    d = len(mean)
    return CohortSpec(
        name=name,
        n=n,
        covariate_mean=np.array(mean, dtype=float),
        covariate_cov=np.eye(d),
        hazard_coefficients=np.array(beta, dtype=float),
        **kw,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# one line per acceptance criterion, printed after the run
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")

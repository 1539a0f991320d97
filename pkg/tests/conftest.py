import numpy as np
import pytest

from bilevel.problem import BilevelProblem


def quad_problem(b=1.0, **overrides):
    """f = 1/2 (y - x)^2, F = 1/2 (y - b)^2 with m = n = 1."""
    kw = dict(
        m=1, n=1,
        F=lambda x, y: 0.5 * float((y[0] - b) ** 2),
        f=lambda x, y: 0.5 * float((y[0] - x[0]) ** 2),
        grad_F_x=lambda x, y: np.zeros(1),
        grad_F_y=lambda x, y: np.array([y[0] - b]),
        grad_f_x=lambda x, y: np.array([x[0] - y[0]]),
        grad_f_y=lambda x, y: np.array([y[0] - x[0]]),
        hvp_yy_f=lambda x, y, v: np.array(v, dtype=float),
        chvp_xy_f=lambda x, y, v: -np.array(v, dtype=float),
        jvp_xy_f=lambda x, y, u: -np.array(u, dtype=float),
        name="quad",
    )
    kw.update(overrides)
    return BilevelProblem(**kw)


def target_problem(c, F=None, grad_F_y=None):
    """f = 1/2 ||y - c||^2 with no x coupling (m = n = len(c))."""
    c = np.atleast_1d(np.asarray(c, dtype=float))
    n = len(c)
    return BilevelProblem(
        m=n, n=n,
        F=F or (lambda x, y: 0.5 * float(y @ y)),
        f=lambda x, y: 0.5 * float((y - c) @ (y - c)),
        grad_F_x=lambda x, y: np.zeros(n),
        grad_F_y=grad_F_y or (lambda x, y: np.array(y, dtype=float)),
        grad_f_x=lambda x, y: np.zeros(n),
        grad_f_y=lambda x, y: y - c,
        hvp_yy_f=lambda x, y, v: np.array(v, dtype=float),
        chvp_xy_f=lambda x, y, v: np.zeros(n),
        jvp_xy_f=lambda x, y, u: np.zeros(n),
        name="target",
    )


@pytest.fixture
def quad():
    return quad_problem()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)

import numpy as np
import pytest

from bilevel.benchmarks import make_non_lls_1, make_quad_lls
from bilevel.errors import BarrierInfeasibleError, ContractViolation
from bilevel.implicit import ift_hypergrad
from bilevel.problem import as_oracles
from bilevel.valuefn import (BarrierParams, barrier_objective, barrier_value, bvfim_hypergrad, ll_value,
                             minimize_barrier)
from bilevel.verify import fd_hypergrad_oracle

from conftest import quad_problem


def zero_F_quad():
    return quad_problem(F=lambda x, y: 0.0, grad_F_y=lambda x, y: np.zeros(1))


@pytest.mark.parametrize("mu1", [1e-2, 1e-4, 1e-8])
def test_ll_value_regularized_quadratic(mu1):
    x = np.array([1.3])
    prm = BarrierParams(mu1=mu1, mu2=0.7)
    psi, y = ll_value(quad_problem(), x, prm, 500, 0.5, tol=0.0)
    assert psi == pytest.approx(mu1 * x[0] ** 2 / (2 * (1 + mu1)) + 0.7, abs=1e-12)
    assert y[0] == pytest.approx(x[0] / (1 + mu1), abs=1e-12)


def test_ll_value_at_origin():
    psi, y = ll_value(quad_problem(), np.zeros(1), BarrierParams(mu2=0.25), 10, 0.5)
    assert psi == 0.25 and y[0] == 0.0


def test_mu2_keeps_ll_point_feasible():
    prm = BarrierParams(mu2=0.05)
    for Q1 in (1, 3, 50):
        psi, y = ll_value(make_non_lls_1(), np.array([0.8]), prm, Q1, 0.5)
        assert psi - as_oracles(make_non_lls_1()).f(np.array([0.8]), y) >= 0.05 * (1 - 1e-9)


def test_barrier_objective_substitution():
    prm = BarrierParams(theta=1e-12, tau=1.0)
    assert barrier_objective(zero_F_quad(), np.zeros(1), np.zeros(1), 1.0, prm) == 0.0


def test_barrier_vanishing_tau_limit():
    p = quad_problem()
    x, y = np.array([0.2]), np.array([0.5])
    plain = p.F(x, y) + 0.5 * 0.1 * 0.25
    vals = [barrier_objective(p, x, y, 2.0, BarrierParams(theta=0.1, tau=t)) for t in (1e-2, 1e-5, 1e-9)]
    errs = [abs(v - plain) for v in vals]
    assert errs[0] > errs[1] > errs[2] and errs[2] < 1e-8


def test_barrier_blows_up_at_boundary():
    p = quad_problem()
    x, psi = np.zeros(1), 0.5   # boundary at |y| = 1
    prm = BarrierParams()
    vals = [barrier_objective(p, x, np.array([s]), psi, prm) for s in (0.9, 0.99, 0.999, 0.99999)]
    assert all(b > a for a, b in zip(vals, vals[1:]))
    with pytest.raises(BarrierInfeasibleError):
        barrier_objective(p, x, np.array([1.0]), psi, prm)


def test_params_validation_and_stages():
    with pytest.raises(ContractViolation):
        BarrierParams(tau=0.0)
    with pytest.raises(ContractViolation):
        BarrierParams(decay=1.0)
    s = BarrierParams().at_stage(3)
    assert s.mu1 == pytest.approx(0.1 * 0.125) and s.tau == pytest.approx(0.0125)


def test_bvfim_is_hessian_free():
    r = bvfim_hypergrad(make_non_lls_1(), np.array([0.3]), BarrierParams(), 100, 100, 0.5)
    assert r.counters.n_hvp == 0
    assert r.peak_iterates == 2


@pytest.mark.parametrize("stage", [0, 7])
def test_envelope_gradient_matches_fd_of_barrier_value(stage):
    bp = make_non_lls_1()
    prm = BarrierParams().at_stage(stage)
    x = np.array([0.3])
    r = bvfim_hypergrad(bp, x, prm, 3000, 3000, 0.5)
    fd = fd_hypergrad_oracle(lambda z: barrier_value(bp, z, prm, 3000, 3000, 0.5), x)
    assert abs(r.total[0] - fd[0]) <= 1e-3 * abs(fd[0])


def test_small_parameters_approach_ift():
    q = make_quad_lls()
    x = np.array([0.3])
    exact = ift_hypergrad(q, x, q.y_star(x)).total[0]
    errs = []
    for sc in (1e-4, 1e-6, 1e-8):
        r = bvfim_hypergrad(q, x, BarrierParams(sc, sc, sc, sc), 3000, 3000, 0.5)
        errs.append(abs(r.total[0] - exact))
    assert errs[0] > errs[1] > errs[2]
    assert errs[-1] < 1e-3


def test_minimize_barrier_decreases_objective():
    bp = make_non_lls_1()
    prm = BarrierParams()
    x = np.array([0.6])
    psi, y_ll = ll_value(bp, x, prm, 200, 0.5)
    start = barrier_objective(bp, x, y_ll, psi, prm)
    y, val = minimize_barrier(bp, x, psi, prm, 200, 0.5, y_ll)
    assert val < start and psi - bp.problem.f(x, y) > 0


def test_infeasible_warm_start_falls_back():
    bp = make_non_lls_1()
    x = np.array([0.6])
    far = np.array([50.0, 0.0])
    r = bvfim_hypergrad(bp, x, BarrierParams(), 100, 100, 0.5, y_br_init=far)
    assert r.info["gap"] > 0


def test_budget_validation():
    with pytest.raises(ContractViolation):
        bvfim_hypergrad(make_non_lls_1(), np.zeros(1), BarrierParams(), 0, 10, 0.5)

import numpy as np
import pytest

from bilevel.dynamics import LAYERWISE, InitMap, LLScheme, unroll
from bilevel.errors import ContractViolation
from bilevel.initbased import (FIRST_ORDER, REPTILE, InitBasedConfig, first_order_hypergrad, init_based_unroll,
                               layerwise_hypergrad, reptile_direction)
from bilevel.recurrent import rad_hypergrad
from bilevel.verify import fd_hypergrad_oracle, rel_err

from conftest import target_problem


def test_one_step_toward_target():
    c = np.array([2.0, -4.0])
    tr = init_based_unroll(target_problem(c), InitBasedConfig(T=1, eta=0.5), np.zeros(2))
    assert np.allclose(tr.y_final, 0.5 * c)


def test_T0_returns_x():
    x = np.array([0.3, 0.1])
    tr = init_based_unroll(target_problem([1.0, 1.0]), InitBasedConfig(T=0), x)
    assert np.array_equal(tr.y_final, x)


def test_zero_omega_keeps_x():
    x = np.array([0.3, 0.1])
    cfg = InitBasedConfig(T=9, variant=LAYERWISE, omega=np.zeros(2))
    assert np.array_equal(init_based_unroll(target_problem([1.0, 1.0]), cfg, x).y_final, x)


def test_identity_needs_square():
    from bilevel.benchmarks import make_non_lls_1
    with pytest.raises(ContractViolation):
        init_based_unroll(make_non_lls_1(), InitBasedConfig(T=2), np.zeros(1))


def test_first_order_identity_init_is_dF_dy():
    p = target_problem([0.5, -1.0])
    x = np.array([1.0, 2.0])
    cfg = InitBasedConfig(T=4, eta=0.3)
    r = first_order_hypergrad(p, cfg, x)
    y_T = init_based_unroll(p, cfg, x).y_final
    assert np.allclose(r.total, y_T)


def test_first_order_gap_is_dropped_hessian_term():
    p = target_problem([0.0])
    cfg = InitBasedConfig(T=1, eta=0.5)
    x = np.array([1.0])
    fo = first_order_hypergrad(p, cfg, x)
    exact = rad_hypergrad(p, cfg.scheme(), InitMap.identity(), x, 1)
    assert fo.total[0] == pytest.approx(0.5)
    assert exact.total[0] == pytest.approx(0.25)
    assert fo.counters.n_hvp == 0


def test_first_order_equals_rad_first_order_flag(rng):
    p = target_problem(rng.normal(size=3))
    cfg = InitBasedConfig(T=6, eta=0.4)
    x = rng.normal(size=3)
    a = first_order_hypergrad(p, cfg, x).total
    b = rad_hypergrad(p, cfg.scheme(), InitMap.identity(), x, 6, first_order=True).total
    assert np.array_equal(a, b)


def test_reptile_fixed_point_is_zero():
    c = np.array([1.0, 2.0])
    cfg = InitBasedConfig(T=5, variant=REPTILE)
    assert np.all(reptile_direction(target_problem(c), cfg, c) == 0)


def test_reptile_long_horizon_points_to_target():
    c = np.array([1.0, -2.0])
    x = np.array([3.0, 3.0])
    cfg = InitBasedConfig(T=80, eta=0.5, variant=REPTILE, alpha=2.0)
    assert np.allclose(reptile_direction(target_problem(c), cfg, x), (x - c) / 2.0, atol=1e-12)


def test_reptile_unit_alpha_one_step_is_gradient():
    c = np.array([1.0, -2.0])
    x = np.array([3.0, 0.5])
    cfg = InitBasedConfig(T=1, eta=1.0, variant=REPTILE, alpha=1.0)
    assert np.allclose(reptile_direction(target_problem(c), cfg, x), x - c)


def test_reptile_weights():
    c = np.array([1.0])
    x = np.array([0.0])
    p = target_problem(c)
    cfg = InitBasedConfig(T=3, eta=0.5, variant=REPTILE, alpha=1.0, step_weights=np.array([1.0, 1.0, 1.0]))
    tr = init_based_unroll(p, cfg, x)
    expected = sum(x - tr.y_at(t) for t in (1, 2, 3))
    assert np.allclose(reptile_direction(p, cfg, x, tr), expected)
    bad = InitBasedConfig(T=3, variant=REPTILE, step_weights=np.ones(2))
    with pytest.raises(ContractViolation):
        reptile_direction(p, bad, x)


@pytest.mark.parametrize("alpha", [0.0, -1.0])
def test_reptile_bad_alpha(alpha):
    with pytest.raises(ContractViolation):
        InitBasedConfig(variant=REPTILE, alpha=alpha)


def test_layerwise_gradient_matches_fd(rng):
    c = rng.normal(size=3)
    p = target_problem(c, F=lambda x, y: 0.5 * float((y - 1.0) @ (y - 1.0)),
                       grad_F_y=lambda x, y: y - 1.0)
    x, omega = rng.normal(size=3), rng.uniform(0.2, 1.5, 3)
    T, eta = 6, 0.4
    cfg = InitBasedConfig(T=T, eta=eta, variant=LAYERWISE, omega=omega)
    r = layerwise_hypergrad(p, cfg, x)

    def obj(z):
        s = LLScheme(LAYERWISE, eta=eta, omega=z[3:])
        return p.F(z[:3], unroll(p, s, InitMap.identity(), z[:3], T).y_final)

    fd = fd_hypergrad_oracle(obj, np.concatenate([x, omega]))
    assert r.total.shape == (6,)
    assert rel_err(r.total, fd) < 1e-7


def test_layerwise_needs_variant():
    with pytest.raises(ContractViolation):
        layerwise_hypergrad(target_problem([1.0]), InitBasedConfig(variant=FIRST_ORDER), np.zeros(1))

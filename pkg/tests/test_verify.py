import numpy as np
import pytest

from bilevel.benchmarks import make_non_lls_1, make_pess_1, make_quad_lls
from bilevel.dynamics import GD, OPTIMISTIC_AGG, InitMap, LLScheme
from bilevel.errors import CapabilityError, ContractViolation
from bilevel.problem import OPTIMISTIC, PESSIMISTIC
from bilevel.verify import (DiagnosticReport, complexity_profile, fd_hypergrad_oracle, grid_oracle_optimum,
                            rel_err, run_checks, theorem1_diagnostics)


def test_fd_oracle_simple():
    g = fd_hypergrad_oracle(lambda x: 0.5 * (x[0] - 1) ** 2, np.zeros(1))
    assert g[0] == pytest.approx(-1.0, abs=1e-9)
    assert np.all(fd_hypergrad_oracle(lambda x: 3.0, np.ones(3)) == 0)


def test_rel_err():
    assert rel_err([1.0, 0.0], [1.0, 0.0]) == 0
    assert rel_err([1.1], [1.0]) == pytest.approx(0.1)


def test_grid_quad_both_formulations():
    bp = make_quad_lls()
    for form in (OPTIMISTIC, PESSIMISTIC):
        x, y, v = grid_oracle_optimum(bp, form, (-1, 3), (-1, 3), resolution=41)
        assert abs(x[0] - 1.0) <= 4 / 40 and abs(v) < 1e-2


def test_grid_counterexamples():
    x, _, _ = grid_oracle_optimum(make_non_lls_1(), OPTIMISTIC, (-1, 2), (-1, 2), resolution=61)
    assert abs(x[0] - 1.0) <= 3 / 60
    x, _, _ = grid_oracle_optimum(make_pess_1(), PESSIMISTIC, (-1, 2), (-1, 2), resolution=61)
    assert abs(x[0] - 0.5) <= 3 / 60


def test_grid_limits():
    with pytest.raises(CapabilityError):
        grid_oracle_optimum(make_quad_lls(m=3), OPTIMISTIC, (0, 1), (0, 1))
    with pytest.raises(ContractViolation):
        grid_oracle_optimum(make_quad_lls(), OPTIMISTIC, (0, 1), (0, 1), resolution=16)


def test_approx_quality_quad_strict():
    rep = theorem1_diagnostics(make_quad_lls(), LLScheme(GD, eta=0.1), InitMap.zeros(1),
                               np.linspace(-2, 2, 5), [25, 50, 100, 200])
    assert rep.passed
    assert all("violations=0" in rep.get(n).detail for n in ("property1.increases", "property2.increases"))


def test_approx_quality_split_on_counterexample():
    rep = theorem1_diagnostics(make_non_lls_1(), LLScheme(GD, eta=0.5), InitMap.zeros(2),
                               np.linspace(-2, 2, 5), [10, 40, 80])
    assert rep.get("property1.final").passed
    assert not rep.get("property2.final").passed
    assert rep.get("property2.final").measured > 0.5


def test_approx_quality_optimistic_aggregation():
    sch = LLScheme(OPTIMISTIC_AGG, eta=1.0, rho0=1.0)
    rep = theorem1_diagnostics(make_non_lls_1(), sch, InitMap.zeros(2), [np.array([0.0])], [500], eps=1e-2)
    assert rep.get("property2.final").passed


def test_approx_quality_needs_psi():
    from conftest import target_problem
    with pytest.raises(CapabilityError):
        theorem1_diagnostics(target_problem(np.zeros(1)), LLScheme(GD, eta=0.5), InitMap.zeros(1), [0.0], [1])


def test_profile_shapes():
    rep = complexity_profile(make_quad_lls(m=4), T_list=(10, 20, 40), M_list=(2, 4, 8))
    assert rep.passed, rep.failures()
    peaks = {(r["method"], r["T"]): r["peak_iterates"] for r in rep.rows if r["method"] != "trad_window"}
    assert [peaks[("rad", T)] for T in (10, 20, 40)] == [11, 21, 41]
    assert len({peaks[("fad", T)] for T in (10, 20, 40)}) == 1
    assert all(r["n_hvp"] == 0 for r in rep.rows if r["method"] == "bvfim")


def test_report_rendering():
    rep = DiagnosticReport("demo")
    rep.add("a", 0.5, 1.0)
    rep.add("b", 0.5, 1.0, ">=", detail="x")
    assert not rep.passed and rep.failures() == ["b"]
    text = rep.to_text()
    assert "PASS" in text and "FAIL" in text and text.startswith("demo\n")
    assert rep.to_csv().splitlines()[0] == "check,measured,sense,threshold,passed,detail"
    with pytest.raises(ContractViolation):
        rep.add("c", 1, 1, "<")


def test_run_checks_pass():
    rep = run_checks()
    assert rep.passed, rep.failures()
    assert rep.passed_prefix("exact.")


def test_tolerance_override_forces_failures(monkeypatch):
    monkeypatch.setenv("BLO_CHECK_TOL", "0")
    assert not run_checks().passed

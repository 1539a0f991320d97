"""Acceptance suite: one PASS/FAIL line per criterion, with its runtime budget.

Run under pytest (lines are printed even with output capture on) or as a
script: ``python3 tests/test_acceptance.py``.
"""

import contextlib
import filecmp
import os
import sys
import tempfile
import time

import numpy as np
import pytest

from bilevel import cli
from bilevel.benchmarks import (make_bilinear_minimax, make_hyperclean, make_non_lls_1, make_pess_1,
                                make_quad_lls)
from bilevel.dynamics import GD, OPTIMISTIC_AGG, PESSIMISTIC_AGG, InitMap, LLScheme, unroll
from bilevel.errors import NumericalError
from bilevel.implicit import LinearSolveConfig, ift_hypergrad, neumann_inverse_hvp
from bilevel.outer import SolverConfig, solve
from bilevel.problem import OPTIMISTIC, PESSIMISTIC, BilevelProblem
from bilevel.recurrent import fad_hypergrad, one_stage_hypergrad, rad_hypergrad, trad_hypergrad
from bilevel.valuefn import BarrierParams, barrier_value, bvfim_hypergrad
from bilevel.verify import (complexity_profile, fd_hypergrad_oracle, grid_oracle_optimum, one_stage_objective,
                            rel_err, theorem1_diagnostics, unrolled_objective)


def c1_exactness():
    rng = np.random.default_rng(11)
    worst = {}
    T = 20
    gd = LLScheme(GD, eta=0.5)
    for bp in (make_quad_lls(m=2, A=np.array([[1.0, 0.5], [0.0, 1.0]])), make_non_lls_1()):
        init = InitMap.zeros(bp.n)
        phi = unrolled_objective(bp, gd, init, T)
        for _ in range(10):
            x = rng.uniform(-2, 2, bp.m)
            fd = fd_hypergrad_oracle(phi, x)
            y0 = rng.uniform(-1, 1, bp.n)
            errs = {
                "fad": rel_err(fad_hypergrad(bp, gd, init, x, T).total, fd),
                "rad": rel_err(rad_hypergrad(bp, gd, init, x, T).total, fd),
                "trad": rel_err(trad_hypergrad(bp, gd, init, x, T, T).total, fd),
                "one_stage": rel_err(one_stage_hypergrad(bp, x, y0).total,
                                     fd_hypergrad_oracle(one_stage_objective(bp, y0), x)),
                "ift": rel_err(ift_hypergrad(bp, x, bp.y_star(x)).total, fd_hypergrad_oracle(bp.phi, x)),
            }
            for k, v in errs.items():
                key = f"{bp.name}.{k}"
                worst[key] = max(worst.get(key, 0.0), v)
    m = max(worst.values())
    return m < 1e-5, f"max rel err {m:.2e} over {len(worst)} method/problem pairs"


def c2_fad_rad():
    rng = np.random.default_rng(12)
    worst = 0.0
    cases = []
    for bp in (make_quad_lls(m=3), make_non_lls_1(), make_pess_1(), make_bilinear_minimax(), make_hyperclean()):
        cases.append((bp, LLScheme(GD, eta=1.0 / bp.lipschitz)))
    non1 = make_non_lls_1()
    cases += [(non1, LLScheme(OPTIMISTIC_AGG, eta=0.5)), (make_pess_1(), LLScheme(PESSIMISTIC_AGG, eta=0.5))]
    for bp, sch in cases:
        for T in (1, 10, 50):
            x = rng.uniform(-1, 1, bp.m)
            init = InitMap.zeros(bp.n)
            worst = max(worst, rel_err(fad_hypergrad(bp, sch, init, x, T).total,
                                       rad_hypergrad(bp, sch, init, x, T).total))
    return worst < 1e-10, f"max rel diff {worst:.2e}"


def c3_counterexample():
    bp = make_non_lls_1()
    x_rad = solve(bp, SolverConfig(method="rad", T=300, K=300), np.zeros(1))[0][0]
    x_opt = solve(bp, SolverConfig(method="bda", T=300, K=300), np.zeros(1))[0][0]
    res = 64
    xg, _, _ = grid_oracle_optimum(bp, OPTIMISTIC, (-0.5, 2.0), (-0.5, 2.0), res)
    cell = 2.5 / (res - 1)
    ok = abs(x_rad - 0.5) <= 0.02 and abs(x_opt - 1.0) <= 0.02 and abs(xg[0] - x_opt) <= cell
    return ok, f"rad x={x_rad:.4f}, optimistic x={x_opt:.4f}, grid x={xg[0]:.4f} (cell {cell:.3f})"


def c4_pessimistic():
    bp = make_pess_1()
    x_pes = solve(bp, SolverConfig(method="bda", T=300, K=300), np.zeros(1))[0][0]
    res = 64
    xg, _, _ = grid_oracle_optimum(bp, PESSIMISTIC, (-0.5, 2.0), (-0.5, 2.0), res)
    cell = 2.5 / (res - 1)
    try:
        x_o = solve(bp, SolverConfig(method="bda", formulation="optimistic", T=300, K=300), np.zeros(1))[0][0]
        how = "converged"
    except NumericalError as e:
        x_o = e.trace.xs()[-1][0]
        how = "aborted"
    ok = abs(x_pes - 0.5) <= 0.02 and abs(xg[0] - x_pes) <= cell and abs(x_o - x_pes) > 0.1
    return ok, f"pessimistic x={x_pes:.4f}, grid x={xg[0]:.4f}, optimistic ({how}) x={x_o:.4g}"


def c5_implicit():
    bp = make_quad_lls(m=2, A=np.array([[1.0, 0.5], [0.0, 1.0]]))
    rng = np.random.default_rng(13)
    gd = LLScheme(GD, eta=0.5)
    worst = 0.0
    for _ in range(5):
        x = rng.uniform(-2, 2, bp.m)
        ref = rad_hypergrad(bp, gd, InitMap.zeros(bp.n), x, 100)
        y = ref.y
        cg = ift_hypergrad(bp, x, y).total
        ne = ift_hypergrad(bp, x, y, LinearSolveConfig(method="neumann", max_iters=200)).total
        worst = max(worst, rel_err(cg, ref.total), rel_err(ne, ref.total))
    d = np.array([0.5, 0.8])
    prob = BilevelProblem(m=1, n=2, F=lambda x, y: 0.0, f=lambda x, y: 0.5 * float(y @ (d * y)),
                          grad_F_x=lambda x, y: np.zeros(1), grad_F_y=lambda x, y: np.zeros(2),
                          grad_f_x=lambda x, y: np.zeros(1), grad_f_y=lambda x, y: d * y,
                          hvp_yy_f=lambda x, y, v: d * v, chvp_xy_f=lambda x, y, v: np.zeros(1))
    v = np.array([1.0, -2.0])
    rem = 0.0
    for J in (1, 5, 12, 30):
        err = v / d - neumann_inverse_hvp(prob, np.zeros(1), np.zeros(2), v, J)
        rem = max(rem, float(np.max(np.abs(err - (1 - d) ** J * v / d))))
    return worst < 1e-4 and rem < 1e-10, f"IFT vs RAD(100) rel {worst:.2e}, Neumann remainder mismatch {rem:.2e}"


def c6_bvfim():
    bp = make_non_lls_1()
    x, _, tr = solve(bp, SolverConfig(method="bvfim", K=320, n_stages=8), np.zeros(1))
    second = int(tr.rows[-1]["n_hvp"])
    worst = 0.0
    z = np.array([0.3])
    for stage in (0, 7):
        prm = BarrierParams().at_stage(stage)
        g = bvfim_hypergrad(bp, z, prm, 3000, 3000, 0.5)
        assert g.counters.n_hvp == 0
        fd = fd_hypergrad_oracle(lambda u: barrier_value(bp, u, prm, 3000, 3000, 0.5), z)
        worst = max(worst, rel_err(g.total, fd))
    ok = second == 0 and abs(x[0] - 1.0) <= 0.05 and worst < 1e-3
    return ok, f"second-order products {second}, final x={x[0]:.4f}, envelope vs fd rel {worst:.2e}"


def c7_approx_quality():
    quad = theorem1_diagnostics(make_quad_lls(), LLScheme(GD, eta=0.1), InitMap.zeros(1),
                                np.linspace(-2, 2, 9), [25, 50, 100, 150, 200])
    gaps = [r["ll_gap"] for r in quad.rows]
    dists = [r["isb_dist"] for r in quad.rows]
    strict = bool(np.all(np.diff(gaps) < 0) and np.all(np.diff(dists) < 0))
    quad_ok = strict and gaps[-1] < 1e-4 and dists[-1] < 1e-4
    non = theorem1_diagnostics(make_non_lls_1(), LLScheme(GD, eta=0.5), InitMap.zeros(2),
                               np.linspace(-2, 2, 9), [10, 50, 100, 200])
    stall = non.get("property2.final").measured
    split = non.passed_prefix("property1") and not non.passed_prefix("property2") and stall > 0.5
    return quad_ok and split, (f"quad gap {gaps[-1]:.1e}, dist {dists[-1]:.1e}, strict={strict}; "
                               f"non_lls_1 property1 pass, property2 dist {stall:.3f}")


def c8_complexity():
    notes, ok = [], True
    for m in (4, 8):
        rep = complexity_profile(make_quad_lls(m=m), T_list=(10, 20, 40), M_list=(2, 4, 8))
        ok = ok and rep.passed
        notes.append(f"m={m}: work ratio {rep.get('fad_rad.work_ratio').measured:.2f}"
                     + ("" if rep.passed else f" failed {rep.failures()}"))
    return ok, "; ".join(notes)


def c9_hyperclean():
    bp = make_hyperclean(seed=7, corrupt_frac=0.3)
    cfg = SolverConfig(method="rad", T=50, K=200, gamma=1.0, tol=0.0)
    x, _, _ = solve(bp, cfg, np.zeros(bp.m))
    phi = unrolled_objective(bp, LLScheme(GD, eta=1.0 / bp.lipschitz), InitMap.zeros(bp.n), 50)
    v0, v1 = phi(np.zeros(bp.m)), phi(x)
    w = 1.0 / (1.0 + np.exp(-x))
    bad = bp.extras["corrupted"]
    wb, wc = float(w[bad].mean()), float(w[~bad].mean())
    return v1 < v0 and wb < wc, f"val loss {v0:.4f} -> {v1:.4f}, weights corrupted {wb:.3f} < clean {wc:.3f}"


CLI_RUNS = {
    "hyperclean.cfg": "problem.name = hyperclean\nmethod.kind = rad\nmethod.T = 20\nmethod.K = 20\n"
                      "run.repeat = 2\nrun.seed = 3\n",
    "proxy.cfg": "problem.name = quad_lls\nproblem.m = 2\nmethod.kind = proxy\nmethod.K = 30\nrun.seed = 5\n",
    "bvfim.cfg": "problem.name = non_lls_1\nmethod.kind = bvfim\nmethod.K = 16\nrun.seed = 1\n",
}


@contextlib.contextmanager
def _out_env(path):
    old = os.environ.get(cli.OUT_ENV)
    os.environ[cli.OUT_ENV] = path
    try:
        yield
    finally:
        if old is None:
            os.environ.pop(cli.OUT_ENV)
        else:
            os.environ[cli.OUT_ENV] = old


def c10_determinism():
    compared = 0
    with tempfile.TemporaryDirectory() as root, contextlib.redirect_stdout(None):
        for name, text in CLI_RUNS.items():
            cfg = os.path.join(root, name)
            with open(cfg, "w") as fh:
                fh.write(text)
            dirs = [os.path.join(root, f"{name}.{i}") for i in (1, 2)]
            for d in dirs:
                with _out_env(d):
                    if cli.main(["solve", cfg]) != 0:
                        return False, f"{name} exited non-zero"
            with _out_env(dirs[0] + ".cmp"):
                if cli.main(["compare", cfg, "--methods", "rad,fad"]) != 0:
                    return False, "compare failed"
            with _out_env(dirs[1] + ".cmp"):
                cli.main(["compare", cfg, "--methods", "rad,fad"])
            for a, b in ((dirs[0], dirs[1]), (dirs[0] + ".cmp", dirs[1] + ".cmp")):
                files = sorted(os.listdir(a))
                if files != sorted(os.listdir(b)):
                    return False, f"file sets differ for {name}"
                _, mismatch, errors = filecmp.cmpfiles(a, b, files, shallow=False)
                if mismatch or errors:
                    return False, f"{name}: differing files {mismatch + errors}"
                compared += len(files)
        rep = os.path.join(root, "hyperclean.cfg.1")
        if not filecmp.cmp(os.path.join(rep, "trace_1.csv"), os.path.join(rep, "trace_2.csv"), shallow=False):
            return False, "in-run repeats differ"
    return True, f"{compared} CSV files bit-identical across repeated runs"


CRITERIA = [
    (1, "hypergradient exactness", c1_exactness, 5),
    (2, "FAD/RAD equivalence", c2_fad_rad, 2),
    (3, "counterexample discrimination", c3_counterexample, 30),
    (4, "pessimistic scheme", c4_pessimistic, 30),
    (5, "implicit gradient agreement", c5_implicit, 5),
    (6, "value-function barrier method", c6_bvfim, 60),
    (7, "approximation-quality diagnostics", c7_approx_quality, 30),
    (8, "complexity shapes", c8_complexity, 30),
    (9, "data hyper-cleaning", c9_hyperclean, 60),
    (10, "CLI determinism", c10_determinism, None),
]


def run_criterion(num, title, fn, budget):
    t0 = time.perf_counter()
    ok, detail = fn()
    dt = time.perf_counter() - t0
    in_time = budget is None or dt < budget
    limit = f"< {budget} s" if budget is not None else "no limit"
    line = (f"CRITERION {num:2d} {'PASS' if ok and in_time else 'FAIL'}  {title}: {detail}  "
            f"[{dt:.2f} s, {limit}]")
    return ok, in_time, line


@pytest.mark.parametrize("num,title,fn,budget", CRITERIA, ids=[f"criterion_{c[0]}" for c in CRITERIA])
def test_criterion(num, title, fn, budget, capsys):
    ok, in_time, line = run_criterion(num, title, fn, budget)
    with capsys.disabled():
        print("\n" + line)
    assert ok, line
    assert in_time, line


if __name__ == "__main__":
    results = [run_criterion(*c) for c in CRITERIA]
    for _, _, line in results:
        print(line)
    sys.exit(0 if all(ok and t for ok, t, _ in results) else 1)

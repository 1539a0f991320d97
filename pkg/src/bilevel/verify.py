"""Independent oracles and diagnostics.

Finite-difference hypergradients, brute-force grid optima, the two
approximation-quality properties of the LL dynamics, and storage / work
profiles of the hypergradient methods.  Results are collected in a
:class:`DiagnosticReport` of named checks.
"""

from __future__ import annotations

import csv
import io
import itertools
import os
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .dynamics import GD, OPTIMISTIC_AGG, InitMap, LLScheme, unroll
from .errors import CapabilityError, ContractViolation
from .implicit import LinearSolveConfig, ift_hypergrad
from .problem import OPTIMISTIC, PESSIMISTIC, SINGLETON, BilevelProblem, Counters, Oracles, as_oracles
from .recurrent import fad_hypergrad, one_stage_hypergrad, rad_hypergrad, trad_hypergrad
from .valuefn import BarrierParams, bvfim_hypergrad

TOL_ENV = "BLO_CHECK_TOL"


@dataclass
class Check:
    """``passed`` iff ``measured`` lies within ``threshold`` (``<=`` or ``>=``)."""

    name: str
    measured: float
    threshold: float
    sense: str = "<="
    detail: str = ""

    def __post_init__(self):
        if self.sense not in ("<=", ">="):
            raise ContractViolation(f"unknown comparison {self.sense!r}")
        self.measured = float(self.measured)
        self.threshold = float(self.threshold)

    @property
    def passed(self) -> bool:
        if self.sense == "<=":
            return bool(self.measured <= self.threshold)
        return bool(self.measured >= self.threshold)


@dataclass
class DiagnosticReport:
    title: str
    checks: list = field(default_factory=list)
    rows: list = field(default_factory=list)   # raw measurements

    def add(self, name, measured, threshold, sense="<=", detail="") -> Check:
        c = Check(name, measured, threshold, sense, detail)
        self.checks.append(c)
        return c

    def extend(self, other: "DiagnosticReport", prefix: str = ""):
        for c in other.checks:
            self.checks.append(Check(prefix + c.name, c.measured, c.threshold, c.sense, c.detail))
        self.rows.extend(other.rows)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def passed_prefix(self, prefix: str) -> bool:
        sel = [c for c in self.checks if c.name.startswith(prefix)]
        if not sel:
            raise KeyError(prefix)
        return all(c.passed for c in sel)

    def failures(self) -> list:
        return [c.name for c in self.checks if not c.passed]

    def get(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_text(self) -> str:
        head = ("check", "measured", "cmp", "threshold", "result")
        body = [(c.name, f"{c.measured:.4g}", c.sense, f"{c.threshold:.4g}", "PASS" if c.passed else "FAIL")
                for c in self.checks]
        widths = [max(len(r[i]) for r in [head] + body) for i in range(len(head))]
        lines = [self.title, "  ".join(h.ljust(w) for h, w in zip(head, widths))]
        lines.append("  ".join("-" * w for w in widths))
        lines += ["  ".join(v.ljust(w) for v, w in zip(r, widths)) for r in body]
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["check", "measured", "sense", "threshold", "passed", "detail"])
        for c in self.checks:
            w.writerow([c.name, repr(c.measured), c.sense, repr(c.threshold), int(c.passed), c.detail])
        return buf.getvalue()

    def rows_csv(self) -> str:
        if not self.rows:
            return ""
        cols = list(self.rows[0])
        for r in self.rows[1:]:
            cols += [k for k in r if k not in cols]
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n", restval="")
        w.writeheader()
        w.writerows(self.rows)
        return buf.getvalue()


# -- finite-difference oracle -------------------------------------------------

def fd_hypergrad_oracle(phi: Callable, x, eps: float = 1e-5) -> np.ndarray:
    """Central differences ``[phi(x + eps e_i) - phi(x - eps e_i)] / (2 eps)``."""
    if not eps > 0:
        raise ContractViolation(f"eps must be positive, got {eps}")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    g = np.empty(len(x))
    for i in range(len(x)):
        e = np.zeros(len(x))
        e[i] = eps
        g[i] = (float(phi(x + e)) - float(phi(x - e))) / (2 * eps)
    return g


def unrolled_objective(p, scheme: LLScheme, init_map: InitMap, T: int) -> Callable:
    """``x -> F(x, y_T(x))`` for the given dynamics."""
    o = Oracles(as_oracles(p).problem, Counters())

    def phi(x):
        y = unroll(o, scheme, init_map, x, T, keep_last=1).y_final
        return o.F(x, y)
    return phi


def one_stage_objective(p, y0) -> Callable:
    """``x -> F(x, y0 - df/dy(x, y0))`` with ``y0`` held fixed."""
    o = Oracles(as_oracles(p).problem, Counters())
    y0 = np.atleast_1d(np.asarray(y0, dtype=float))
    return lambda x: o.F(x, y0 - o.grad_f_y(x, y0))


def rel_err(a, b) -> float:
    a, b = np.atleast_1d(a), np.atleast_1d(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12))


# -- grid oracle ---------------------------------------------------------------

def grid_oracle_optimum(p, formulation: str, x_range, y_range, resolution: int = 64):
    """Brute-force ``(x_hat, y_hat, value)`` for the optimistic or pessimistic problem.

    Every coordinate uses ``resolution`` points on its range.  ``S(x)`` is
    the set of grid ``y`` with ``f`` within ``delta_f`` of the grid minimum,
    where ``delta_f = 1e-6 + 1e-3 * (largest f change between neighbouring
    grid points at that x)``.
    """
    o = as_oracles(p)
    if o.m > 2 or o.n > 2:
        raise CapabilityError(f"grid oracle supports m, n <= 2 (got m={o.m}, n={o.n})")
    if resolution < 32:
        raise ContractViolation("resolution must be >= 32")
    if formulation not in (OPTIMISTIC, PESSIMISTIC, SINGLETON):
        raise ContractViolation(f"unknown formulation {formulation!r}")
    prob = o.problem
    xs_axis = np.linspace(x_range[0], x_range[1], resolution)
    ys_axis = np.linspace(y_range[0], y_range[1], resolution)
    ys = [np.array(c) for c in itertools.product(ys_axis, repeat=o.n)]
    shape = (resolution,) * o.n
    sign = -1.0 if formulation == PESSIMISTIC else 1.0
    best = (None, None, np.inf)
    for xc in itertools.product(xs_axis, repeat=o.m):
        x = np.array(xc)
        fv = np.array([prob.f(x, y) for y in ys])
        grid = fv.reshape(shape)
        var = max(float(np.max(np.abs(np.diff(grid, axis=a)))) for a in range(o.n))
        members = np.flatnonzero(fv <= fv.min() + 1e-6 + 1e-3 * var)
        Fv = np.array([prob.F(x, ys[i]) for i in members])
        j = int(np.argmin(sign * Fv))
        if Fv[j] < best[2]:
            best = (x, ys[members[j]], float(Fv[j]))
    return best


# -- approximation-quality properties -------------------------------------------

def _nonincreasing_violations(vals, strict=False) -> int:
    d = np.diff(np.asarray(vals, dtype=float))
    return int(np.sum(d >= 0) if strict else np.sum(d > 0))


def theorem1_diagnostics(p, scheme: LLScheme, init_map: InitMap, x_samples, T_list: Sequence[int],
                         psi: Optional[Callable] = None, isb_solution: Optional[Callable] = None,
                         eps: float = 1e-4) -> DiagnosticReport:
    """Uniform LL gap and pointwise distance to the ISB solution along ``T_list``.

    Property 1 measures ``sup_x [f(x, y_T(x)) - psi(x)]``; property 2 measures
    ``max_x ||y_T(x) - y_isb(x)||``.  Each property gets a monotonicity check
    (count of increases, threshold 0), a strict-decrease count reported as
    a row field, and a final-value check at the largest T against ``eps``.
    """
    psi = psi if psi is not None else getattr(p, "psi", None)
    if psi is None:
        raise CapabilityError("approximation-quality diagnostics need a psi oracle")
    isb_solution = isb_solution if isb_solution is not None else getattr(p, "y_star", None)
    T_list = sorted(int(T) for T in T_list)
    if not T_list or T_list[0] < 0:
        raise ContractViolation("T_list must hold non-negative horizons")
    o = Oracles(as_oracles(p).problem, Counters())
    xs = [np.atleast_1d(np.asarray(x, dtype=float)) for x in x_samples]
    rep = DiagnosticReport("approximation quality of the LL dynamics")
    gaps, dists = [], []
    for T in T_list:
        finals = [unroll(o, scheme, init_map, x, T, keep_last=1).y_final for x in xs]
        gap = max(o.f(x, y) - float(psi(x)) for x, y in zip(xs, finals))
        gaps.append(gap)
        row = {"T": T, "ll_gap": gap}
        if isb_solution is not None:
            dist = max(float(np.linalg.norm(y - isb_solution(x))) for x, y in zip(xs, finals))
            dists.append(dist)
            row["isb_dist"] = dist
        rep.rows.append(row)
    rep.add("property1.increases", _nonincreasing_violations(gaps), 0,
            detail=f"strict-decrease violations={_nonincreasing_violations(gaps, strict=True)}")
    rep.add("property1.final", gaps[-1], eps, detail=f"T={T_list[-1]}")
    if dists:
        rep.add("property2.increases", _nonincreasing_violations(dists), 0,
                detail=f"strict-decrease violations={_nonincreasing_violations(dists, strict=True)}")
        rep.add("property2.final", dists[-1], eps, detail=f"T={T_list[-1]}")
    return rep


# -- complexity profile ------------------------------------------------------------

PROFILE_METHODS = ("fad", "rad", "trad", "ift", "bvfim")


def _profile_one(o, method, scheme, init_map, x, T, M):
    if method == "fad":
        return fad_hypergrad(o, scheme, init_map, x, T)
    if method == "rad":
        return rad_hypergrad(o, scheme, init_map, x, T)
    if method == "trad":
        return trad_hypergrad(o, scheme, init_map, x, T, M)
    if method == "ift":
        y = unroll(o, scheme, init_map, x, T, keep_last=1).y_final
        return ift_hypergrad(o, x, y, LinearSolveConfig(accept_partial=True))
    if method == "bvfim":
        return bvfim_hypergrad(o, x, BarrierParams(), max(T, 1), max(T, 1), scheme.eta)
    if method == "one_stage":
        return one_stage_hypergrad(o, x, init_map(x, o.n))
    raise ContractViolation(f"method {method!r} cannot be profiled")


def _slope(ts, vals) -> float:
    return float(np.polyfit(np.asarray(ts, float), np.asarray(vals, float), 1)[0])


def complexity_profile(p, methods: Sequence[str] = PROFILE_METHODS, T_list: Sequence[int] = (10, 20, 40),
                       M: Optional[int] = None, M_list: Optional[Sequence[int]] = None,
                       scheme: Optional[LLScheme] = None, x=None) -> DiagnosticReport:
    """Peak stored iterates and oracle counts per method and horizon.

    ``trad`` uses a fixed window ``M`` (default ``min(T_list) // 2``) across
    ``T_list``; with ``M_list`` it is additionally profiled at the largest T
    for each window.  Work ratio compares second-order products per step.
    """
    o = as_oracles(p)
    scheme = scheme or LLScheme(GD, eta=0.5 / max(getattr(p, "lipschitz", 1.0) or 1.0, 1e-12))
    init_map = InitMap.zeros(o.n)
    x = np.zeros(o.m) if x is None else np.atleast_1d(np.asarray(x, dtype=float))
    T_list = sorted(int(T) for T in T_list)
    M = M if M is not None else max(T_list[0] // 2, 1)
    rep = DiagnosticReport("storage and work profile")
    by = {}
    for method in methods:
        for T in T_list:
            r = _profile_one(o, method, scheme, init_map, x, T, M)
            row = {"method": method, "T": T, "M": M if method == "trad" else "",
                   "peak_iterates": r.peak_iterates, "peak_panels": r.peak_panels,
                   "n_hvp": r.counters.n_hvp, "n_grad_f": r.counters.n_grad_f,
                   "n_grad_F": r.counters.n_grad_F, "m": o.m}
            rep.rows.append(row)
            by.setdefault(method, []).append(row)
    if "trad" in methods and M_list:
        Tmax = T_list[-1]
        for Mi in M_list:
            r = _profile_one(o, "trad", scheme, init_map, x, Tmax, Mi)
            rep.rows.append({"method": "trad_window", "T": Tmax, "M": Mi, "peak_iterates": r.peak_iterates,
                             "peak_panels": r.peak_panels, "n_hvp": r.counters.n_hvp,
                             "n_grad_f": r.counters.n_grad_f, "n_grad_F": r.counters.n_grad_F, "m": o.m})
    peaks = lambda meth: [r["peak_iterates"] for r in by[meth]]
    if "rad" in by:
        resid = max(abs(pk - (T + 1)) for pk, T in zip(peaks("rad"), T_list))
        rep.add("rad.storage_slope", _slope(T_list, peaks("rad")), 1 - 1e-9, ">=", "fit of peak iterates on T")
        rep.add("rad.storage_affine_residual", resid, 0, detail="peak - (T + 1)")
    for meth in ("fad", "ift", "bvfim"):
        if meth in by:
            rep.add(f"{meth}.storage_spread", np.ptp(peaks(meth)), 0, detail="max - min over T")
    if "trad" in by:
        rep.add("trad.storage_spread_in_T", np.ptp(peaks("trad")), 0, detail=f"fixed M={M}")
        if M_list and len(M_list) > 1:
            w = [r for r in rep.rows if r["method"] == "trad_window"]
            rep.add("trad.storage_slope_in_M", _slope([r["M"] for r in w], [r["peak_iterates"] for r in w]),
                    1 - 1e-9, ">=")
    if "bvfim" in by:
        rep.add("bvfim.second_order", max(r["n_hvp"] for r in by["bvfim"]), 0)
    if "fad" in by and "rad" in by:
        ratio = min(f["n_hvp"] / max(r["n_hvp"], 1) for f, r in zip(by["fad"], by["rad"]))
        rep.add("fad_rad.work_ratio", ratio, o.m / 2, ">=", f"m={o.m}")
    return rep


# -- full invariant suite -------------------------------------------------------------

def _tol(value: float) -> float:
    """Threshold, unless the environment override replaces every tolerance."""
    env = os.environ.get(TOL_ENV)
    return float(env) if env not in (None, "") else value


def run_checks(seed: int = 0) -> DiagnosticReport:
    """The invariant suite behind the ``check`` subcommand (a few seconds)."""
    from .benchmarks import make_bilinear_minimax, make_hyperclean, make_non_lls_1, make_pess_1, make_quad_lls
    from .implicit import neumann_inverse_hvp

    rep = DiagnosticReport("invariant suite")
    rng = np.random.default_rng(seed)
    quad = make_quad_lls(m=2, A=np.array([[1.0, 0.5], [0.0, 1.0], [0.3, -0.2]]), b=np.array([1.0, -1.0, 0.5]))
    non1 = make_non_lls_1()
    gd = LLScheme(GD, eta=0.5)
    zeros = lambda bp: InitMap.zeros(bp.n)
    T = 20

    # exactness against finite differences of each method's own objective
    for bp in (quad, non1):
        worst = {k: 0.0 for k in ("fad", "rad", "trad", "one_stage", "ift")}
        phi = unrolled_objective(bp, gd, zeros(bp), T)
        for _ in range(3):
            x = rng.uniform(-2, 2, bp.m)
            fd = fd_hypergrad_oracle(phi, x)
            worst["fad"] = max(worst["fad"], rel_err(fad_hypergrad(bp, gd, zeros(bp), x, T).total, fd))
            worst["rad"] = max(worst["rad"], rel_err(rad_hypergrad(bp, gd, zeros(bp), x, T).total, fd))
            worst["trad"] = max(worst["trad"], rel_err(trad_hypergrad(bp, gd, zeros(bp), x, T, T).total, fd))
            y0 = rng.uniform(-1, 1, bp.n)
            worst["one_stage"] = max(worst["one_stage"], rel_err(
                one_stage_hypergrad(bp, x, y0).total, fd_hypergrad_oracle(one_stage_objective(bp, y0), x)))
            y_isb = bp.y_star(x)
            worst["ift"] = max(worst["ift"], rel_err(ift_hypergrad(bp, x, y_isb).total, bp.grad_phi(x)))
        for k, v in worst.items():
            rep.add(f"exact.{bp.name}.{k}", v, _tol(1e-5), detail="relative error vs oracle")

    # forward and reverse mode agree on every benchmark
    worst = 0.0
    for bp in (quad, non1, make_pess_1(), make_bilinear_minimax(), make_hyperclean(n_tr=10, n_val=10)):
        sch = LLScheme(GD, eta=1.0 / bp.lipschitz)
        x = rng.uniform(-1, 1, bp.m)
        worst = max(worst, rel_err(fad_hypergrad(bp, sch, zeros(bp), x, 15).total,
                                   rad_hypergrad(bp, sch, zeros(bp), x, 15).total))
    for kind in ("optimistic", "pessimistic"):
        sch = LLScheme(OPTIMISTIC_AGG if kind == "optimistic" else "pessimistic", eta=0.5)
        x = rng.uniform(-1, 1, 1)
        worst = max(worst, rel_err(fad_hypergrad(non1, sch, zeros(non1), x, 15).total,
                                   rad_hypergrad(non1, sch, zeros(non1), x, 15).total))
    rep.add("fad_rad.equivalence", worst, _tol(1e-10))

    # grid oracle against closed forms
    xh, _, _ = grid_oracle_optimum(non1, OPTIMISTIC, (-0.5, 2.0), (-0.5, 2.0), 51)
    rep.add("grid.non_lls_1.optimistic", abs(xh[0] - 1.0), _tol(2.5 / 50))
    xh, _, _ = grid_oracle_optimum(make_pess_1(), PESSIMISTIC, (-0.5, 2.0), (-0.5, 2.0), 51)
    rep.add("grid.pess_1.pessimistic", abs(xh[0] - 0.5), _tol(2.5 / 50))

    # Neumann remainder on a diagonal system
    d = np.array([0.5, 0.8])
    prob = BilevelProblem(m=2, n=2, F=lambda x, y: 0.0, f=lambda x, y: 0.5 * float(y @ (d * y)),
                          grad_F_x=lambda x, y: np.zeros(2), grad_F_y=lambda x, y: np.zeros(2),
                          grad_f_x=lambda x, y: np.zeros(2), grad_f_y=lambda x, y: d * y,
                          hvp_yy_f=lambda x, y, v: d * v, chvp_xy_f=lambda x, y, v: np.zeros(2))
    v = np.array([1.0, -2.0])
    J = 12
    err = np.max(np.abs((v / d - neumann_inverse_hvp(prob, np.zeros(2), np.zeros(2), v, J)) - (1 - d) ** J * v / d))
    rep.add("neumann.remainder", err, _tol(1e-10))

    # approximation-quality split on the counterexample
    t1 = theorem1_diagnostics(non1, LLScheme(GD, eta=0.5), InitMap.zeros(2), np.linspace(-2, 2, 5), [10, 40, 80])
    rep.add("approx_quality.non_lls_1.property1", 0 if t1.passed_prefix("property1") else 1, 0)
    rep.add("approx_quality.non_lls_1.property2_fails", 1 if t1.passed_prefix("property2") else 0, 0)

    # storage shapes and Hessian-free barrier method
    prof = complexity_profile(make_quad_lls(m=4, A=np.eye(4)), T_list=(10, 20, 40), M_list=(2, 4, 8))
    rep.extend(prof, "profile.")
    return rep

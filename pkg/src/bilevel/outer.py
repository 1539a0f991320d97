"""The outer loop: repeatedly compute a hypergradient and take a UL gradient step."""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field, fields, replace
from typing import Optional

import numpy as np

from .dynamics import GD, LAYERWISE, OPTIMISTIC_AGG, PESSIMISTIC_AGG, InitMap, LLScheme, unroll
from .errors import ConfigError, ContractViolation, NumericalError
from .implicit import LinearSolveConfig, ift_hypergrad
from .initbased import FIRST_ORDER, REPTILE, InitBasedConfig, first_order_hypergrad, layerwise_hypergrad, reptile_direction
from .problem import FORMULATIONS, OPTIMISTIC, PESSIMISTIC, SINGLETON, Counters, Oracles, as_oracles
from .proxy import HyperNet, ProxyTrainConfig, proxy_hypergrad, train_proxy
from .recurrent import fad_hypergrad, one_stage_hypergrad, rad_hypergrad, trad_hypergrad
from .report import HypergradReport
from .schedules import schedule_value
from .valuefn import BarrierParams, bvfim_hypergrad

__all__ = ["METHODS", "SolverConfig", "SolveTrace", "solve", "schedule_value"]

METHODS = ("fad", "rad", "trad", "bda", "one_stage", "first_order", "reptile",
           "layerwise", "proxy", "ift", "bvfim")
AGGREGATING = ("bda",)
INIT_KINDS = ("auto", "zeros", "identity")
TRACE_COLUMNS = ("k", "F", "f", "grad_norm", "wall_ms", "n_grad_f", "n_grad_F", "n_hvp", "peak_iterates")


@dataclass(frozen=True)
class SolverConfig:
    method: str = "rad"
    K: int = 100
    T: int = 30
    gamma: float = 0.5
    gamma_schedule: str = "constant"      # or "sqrt" for gamma / sqrt(k)
    eta: Optional[float] = None           # None: 1/L when the problem knows L, else 0.5
    eta_schedule: str = "constant"
    rho0: float = 0.5
    rho_schedule: str = "harmonic"
    formulation: Optional[str] = None     # None: the problem's own formulation
    tol: float = 1e-8                     # stop when ||total|| < tol; 0 disables
    seed: int = 0
    M: Optional[int] = None               # trad window
    one_stage_mode: str = "exact"
    one_stage_eps: Optional[float] = None
    alpha: Optional[float] = None         # reptile scale
    omega: Optional[tuple] = None         # layerwise preconditioner, ones when None
    learn_omega: bool = True
    omega_lr: Optional[float] = None      # defaults to gamma
    linear_solve: LinearSolveConfig = field(default_factory=LinearSolveConfig)
    barrier: BarrierParams = field(default_factory=BarrierParams)
    Q1: int = 50
    Q2: int = 100
    n_stages: int = 8
    proxy: ProxyTrainConfig = field(default_factory=ProxyTrainConfig)
    k_inner: int = 5                      # proxy training steps per UL step
    warm_start: bool = False
    init: str = "auto"
    record_time: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; known: {', '.join(METHODS)}")
        if self.K < 1:
            raise ConfigError("K must be >= 1")
        if self.T < 0:
            raise ConfigError("T must be >= 0")
        if not self.gamma > 0:
            raise ConfigError("gamma must be positive")
        if self.gamma_schedule not in ("constant", "sqrt"):
            raise ConfigError("gamma_schedule must be 'constant' or 'sqrt'")
        if self.eta is not None and not self.eta > 0:
            raise ConfigError("eta must be positive")
        if self.formulation is not None and self.formulation not in FORMULATIONS:
            raise ConfigError(f"unknown formulation {self.formulation!r}")
        if self.formulation == PESSIMISTIC and self.method not in AGGREGATING:
            raise ConfigError(f"method {self.method!r} has no pessimistic support; use 'bda'")
        if not self.tol >= 0:
            raise ConfigError("tol must be >= 0")
        if self.method == "trad" and (self.M is None or not 1 <= self.M <= self.T):
            raise ConfigError("trad needs a window 1 <= M <= T")
        if self.method in ("fad", "rad", "trad", "bda", "first_order", "reptile", "layerwise") and self.T < 1:
            raise ConfigError(f"method {self.method!r} needs T >= 1")
        if self.one_stage_mode not in ("exact", "fd"):
            raise ConfigError("one_stage_mode must be 'exact' or 'fd'")
        if min(self.Q1, self.Q2, self.n_stages) < 1:
            raise ConfigError("Q1, Q2 and n_stages must be >= 1")
        if self.k_inner < 0:
            raise ConfigError("k_inner must be >= 0")
        if self.init not in INIT_KINDS:
            raise ConfigError(f"init must be one of {INIT_KINDS}")


@dataclass
class SolveTrace:
    """Per-iteration records.  Counters are cumulative over the solve."""

    m: int
    rows: list = field(default_factory=list)
    stages: list = field(default_factory=list)   # (k_first, params) for barrier solves
    converged: bool = False
    method: str = ""

    def __len__(self):
        return len(self.rows)

    @property
    def columns(self) -> list:
        return list(TRACE_COLUMNS) + [f"x_{i}" for i in range(self.m)]

    def xs(self) -> np.ndarray:
        return np.array([[r[f"x_{i}"] for i in range(self.m)] for r in self.rows])

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for r in self.rows:
            w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in self.columns])
        return buf.getvalue()


def _formulation(p, cfg):
    if cfg.formulation is not None:
        return cfg.formulation
    return getattr(p, "formulation", SINGLETON)


def _eta(p, cfg):
    if cfg.eta is not None:
        return cfg.eta
    lip = getattr(p, "lipschitz", None)
    return 1.0 / lip if lip else 0.5


def _init_map(o, cfg):
    kind = cfg.init
    if kind == "auto":
        kind = "identity" if cfg.method in ("first_order", "reptile", "layerwise") else "zeros"
    if kind == "identity":
        if o.n != o.m:
            raise ConfigError(f"identity initialization needs n == m (got n={o.n}, m={o.m})")
        return InitMap.identity()
    return InitMap.zeros(o.n)


class _Method:
    """Holds the per-solve state (warm starts, proxy net, omega) of one method."""

    def __init__(self, p, o: Oracles, cfg: SolverConfig):
        self.cfg = cfg
        self.o = o
        self.eta = _eta(p, cfg)
        form = _formulation(p, cfg)
        if form == PESSIMISTIC and cfg.method not in AGGREGATING:
            raise ConfigError(f"method {cfg.method!r} has no pessimistic support; use 'bda'")
        kind = GD
        if cfg.method == "bda":
            kind = PESSIMISTIC_AGG if form == PESSIMISTIC else OPTIMISTIC_AGG
        self.scheme = LLScheme(kind, eta=self.eta, eta_schedule=cfg.eta_schedule,
                               rho0=cfg.rho0, rho_schedule=cfg.rho_schedule)
        self.base_map = _init_map(o, cfg)
        self.y_last = None
        self.omega = np.ones(o.n) if cfg.omega is None else np.asarray(cfg.omega, dtype=float)
        self.net = HyperNet.zeros(o.m, o.n) if cfg.method == "proxy" else None
        self.y_ll = None

    def init_map(self):
        if self.cfg.warm_start and self.y_last is not None:
            return InitMap.constant(self.y_last)
        return self.base_map

    def hypergrad(self, x, k: int, params: Optional[BarrierParams]) -> HypergradReport:
        cfg, o = self.cfg, self.o
        method = cfg.method
        if method == "fad":
            rep = fad_hypergrad(o, self.scheme, self.init_map(), x, cfg.T)
        elif method in ("rad", "bda"):
            rep = rad_hypergrad(o, self.scheme, self.init_map(), x, cfg.T)
        elif method == "trad":
            rep = trad_hypergrad(o, self.scheme, self.init_map(), x, cfg.T, cfg.M)
        elif method == "one_stage":
            y0 = unroll(o, self.scheme, self.init_map(), x, cfg.T, keep_last=1).y_final
            rep = one_stage_hypergrad(o, x, y0, cfg.one_stage_mode, cfg.one_stage_eps)
            rep.peak_iterates = max(rep.peak_iterates, 2)
        elif method == "first_order":
            ib = InitBasedConfig(cfg.T, self.eta, cfg.eta_schedule, FIRST_ORDER)
            rep = first_order_hypergrad(o, ib, x, self.init_map())
        elif method == "reptile":
            ib = InitBasedConfig(cfg.T, self.eta, cfg.eta_schedule, REPTILE, alpha=cfg.alpha)
            traj = unroll(o, ib.scheme(), self.init_map(), x, cfg.T)
            d = reptile_direction(o, ib, x, traj)
            rep = HypergradReport(d, np.zeros_like(d), "reptile", T=cfg.T,
                                  peak_iterates=len(traj.y_seq), y=np.array(traj.y_final))
        elif method == "layerwise":
            ib = InitBasedConfig(cfg.T, self.eta, cfg.eta_schedule, LAYERWISE,
                                 omega=self.omega, learn_omega=cfg.learn_omega)
            rep = layerwise_hypergrad(o, ib, x, self.init_map())
        elif method == "proxy":
            pc = replace(cfg.proxy, steps=cfg.k_inner, seed=cfg.proxy.seed + cfg.seed + k)
            self.net = train_proxy(o, pc, x, self.net)
            rep = proxy_hypergrad(o, self.net, x)
        elif method == "ift":
            y = unroll(o, self.scheme, self.init_map(), x, cfg.T, keep_last=1).y_final
            rep = ift_hypergrad(o, x, y, cfg.linear_solve)
        else:
            rep = bvfim_hypergrad(o, x, params, cfg.Q1, cfg.Q2, self.eta, self.y_ll, self.y_last)
            self.y_ll = rep.info["y_ll"]
        if rep.y is not None:
            self.y_last = np.array(rep.y)
        return rep


def _stage_of(k: int, K: int, n_stages: int) -> int:
    return min((k - 1) * n_stages // K, n_stages - 1)


def solve(p, cfg: SolverConfig, x0):
    """Gradient descent on the UL variable.

    Returns ``(x_final, y_final, trace)``.  ``x_final`` is the point after the
    last update (or the point where the tolerance was met); ``y_final`` is
    the LL point behind the last recorded hypergradient.  Barrier solves
    split the K iterations into ``n_stages`` equal stages with geometrically
    decaying parameters and only test the tolerance in the last stage.
    """
    o = as_oracles(p)
    x = np.atleast_1d(np.array(x0, dtype=float))
    if x.shape != (o.m,) or not np.all(np.isfinite(x)):
        raise ContractViolation(f"x0 must be a finite vector of length {o.m}")
    state = _Method(p, o, cfg)
    side = Oracles(o.problem, Counters())   # uncounted evaluations for the trace
    trace = SolveTrace(m=o.m, method=cfg.method)
    start_counts = o.counters.snapshot()
    y = None
    stage = -1
    try:
        for k in range(1, cfg.K + 1):
            params = None
            if cfg.method == "bvfim":
                s = _stage_of(k, cfg.K, cfg.n_stages)
                params = cfg.barrier.at_stage(s)
                if s != stage:
                    stage = s
                    trace.stages.append((k, params))
            t0 = time.perf_counter()
            rep = state.hypergrad(x, k, params)
            ms = (time.perf_counter() - t0) * 1e3 if cfg.record_time else 0.0
            total = rep.total
            gnorm = float(np.linalg.norm(total[: o.m]))
            y = rep.y
            counts = o.counters - start_counts
            F_val, f_val = (side.F(x, y), side.f(x, y)) if y is not None else (math.nan, math.nan)
            row = {"k": k, "F": float(F_val), "f": float(f_val), "grad_norm": gnorm, "wall_ms": ms,
                   "n_grad_f": counts.n_grad_f, "n_grad_F": counts.n_grad_F, "n_hvp": counts.n_hvp,
                   "peak_iterates": rep.peak_iterates}
            row.update({f"x_{i}": float(v) for i, v in enumerate(x)})
            trace.rows.append(row)
            if not np.all(np.isfinite(total)):
                raise NumericalError(f"non-finite hypergradient at k={k}")
            last_stage = cfg.method != "bvfim" or stage == cfg.n_stages - 1
            if gnorm < cfg.tol and last_stage:
                trace.converged = True
                break
            gamma = schedule_value("sqrt" if cfg.gamma_schedule == "sqrt" else "constant", cfg.gamma, k)
            x = x - gamma * total[: o.m]
            if cfg.method == "layerwise" and cfg.learn_omega:
                lr = cfg.omega_lr if cfg.omega_lr is not None else gamma
                state.omega = state.omega - lr * total[o.m:]
    except NumericalError as e:
        e.trace = trace
        raise
    return x, (None if y is None else np.array(y)), trace

"""Bi-level problem definition and the counted oracle view solvers consume.

A :class:`BilevelProblem` is an immutable bundle of pure functions.  Every
solve wraps it in an :class:`Oracles` object that owns the per-solve
invocation counters, checks dimensions and finiteness, and synthesizes
missing second-order products by central differences of the gradients.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable, Optional

import numpy as np

from .errors import CapabilityError, ContractViolation, NumericalDomainError

Vector = np.ndarray
ScalarFn = Callable[[Vector, Vector], float]
GradFn = Callable[[Vector, Vector], Vector]
ProductFn = Callable[[Vector, Vector, Vector], Vector]

SINGLETON = "singleton"
OPTIMISTIC = "optimistic"
PESSIMISTIC = "pessimistic"
FORMULATIONS = (SINGLETON, OPTIMISTIC, PESSIMISTIC)


@dataclass(frozen=True)
class BilevelProblem:
    """UL objective ``F`` and LL objective ``f`` over ``x in R^m``, ``y in R^n``.

    Second-order oracles are operator-form products:

    * ``hvp_yy_*(x, y, v)`` -> ``(d2/dy dy') v``            (length n)
    * ``chvp_xy_*(x, y, v)`` -> ``(d2/dy dx')' v``          (length m)
    * ``jvp_xy_*(x, y, u)`` -> ``(d2/dy dx') u``            (length n)

    The ``*_F`` products are only needed when ``F`` enters the LL dynamics
    (aggregation schemes).  Any missing product is replaced by central
    differences of the matching gradient when ``fd_fallback`` is set.
    """

    m: int
    n: int
    F: ScalarFn
    f: ScalarFn
    grad_F_x: GradFn
    grad_F_y: GradFn
    grad_f_x: GradFn
    grad_f_y: GradFn
    hvp_yy_f: Optional[ProductFn] = None
    chvp_xy_f: Optional[ProductFn] = None
    jvp_xy_f: Optional[ProductFn] = None
    hvp_yy_F: Optional[ProductFn] = None
    chvp_xy_F: Optional[ProductFn] = None
    jvp_xy_F: Optional[ProductFn] = None
    fd_fallback: bool = True
    name: str = "problem"

    def __post_init__(self):
        if self.m < 1 or self.n < 1:
            raise ContractViolation(f"dimensions must be positive, got m={self.m}, n={self.n}")

    @property
    def has_analytic_second_order(self) -> bool:
        return self.hvp_yy_f is not None and self.chvp_xy_f is not None

    def negate_upper(self) -> "BilevelProblem":
        """Same LL problem with ``F`` replaced by ``-F``."""

        def neg(fn):
            if fn is None:
                return None
            return lambda *args: -np.asarray(fn(*args))

        return BilevelProblem(
            m=self.m, n=self.n,
            F=lambda x, y: -self.F(x, y), f=self.f,
            grad_F_x=neg(self.grad_F_x), grad_F_y=neg(self.grad_F_y),
            grad_f_x=self.grad_f_x, grad_f_y=self.grad_f_y,
            hvp_yy_f=self.hvp_yy_f, chvp_xy_f=self.chvp_xy_f, jvp_xy_f=self.jvp_xy_f,
            hvp_yy_F=neg(self.hvp_yy_F), chvp_xy_F=neg(self.chvp_xy_F), jvp_xy_F=neg(self.jvp_xy_F),
            fd_fallback=self.fd_fallback, name=f"neg({self.name})",
        )


@dataclass
class Counters:
    n_F: int = 0
    n_f: int = 0
    n_grad_F: int = 0
    n_grad_f: int = 0
    n_hvp: int = 0

    def snapshot(self) -> "Counters":
        return Counters(**asdict(self))

    def as_dict(self) -> dict:
        return asdict(self)

    def __sub__(self, other: "Counters") -> "Counters":
        return Counters(**{k: v - getattr(other, k) for k, v in asdict(self).items()})


def default_fd_step(z: Vector) -> float:
    return 1e-6 * (1.0 + float(np.linalg.norm(z)))


def _vec(v, size: int, what: str) -> Vector:
    a = np.asarray(v, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1)
    if a.shape != (size,):
        raise ContractViolation(f"{what}: expected shape ({size},), got {a.shape}")
    return a


class Oracles:
    """Counted, validated view of a problem owned by a single solve."""

    def __init__(self, problem: BilevelProblem, counters: Optional[Counters] = None):
        self.problem = problem
        self.counters = counters if counters is not None else Counters()
        self.m = problem.m
        self.n = problem.n

    def _check(self, out, size, x, y, what):
        a = _vec(out, size, what) if size else float(out)
        if not np.all(np.isfinite(a)):
            raise NumericalDomainError(f"{what} returned a non-finite value", x=x, y=y)
        return a

    def _xy(self, x, y):
        return _vec(x, self.m, "x"), _vec(y, self.n, "y")

    # values
    def F(self, x, y) -> float:
        x, y = self._xy(x, y)
        self.counters.n_F += 1
        return self._check(self.problem.F(x, y), 0, x, y, "F")

    def f(self, x, y) -> float:
        x, y = self._xy(x, y)
        self.counters.n_f += 1
        return self._check(self.problem.f(x, y), 0, x, y, "f")

    # gradients
    def grad_F_x(self, x, y) -> Vector:
        x, y = self._xy(x, y)
        self.counters.n_grad_F += 1
        return self._check(self.problem.grad_F_x(x, y), self.m, x, y, "grad_F_x")

    def grad_F_y(self, x, y) -> Vector:
        x, y = self._xy(x, y)
        self.counters.n_grad_F += 1
        return self._check(self.problem.grad_F_y(x, y), self.n, x, y, "grad_F_y")

    def grad_f_x(self, x, y) -> Vector:
        x, y = self._xy(x, y)
        self.counters.n_grad_f += 1
        return self._check(self.problem.grad_f_x(x, y), self.m, x, y, "grad_f_x")

    def grad_f_y(self, x, y) -> Vector:
        x, y = self._xy(x, y)
        self.counters.n_grad_f += 1
        return self._check(self.problem.grad_f_y(x, y), self.n, x, y, "grad_f_y")

    # second order
    def _product(self, which: str, x, y, v, out_size: int, in_size: int):
        x, y = self._xy(x, y)
        v = _vec(v, in_size, f"{which} direction")
        analytic = getattr(self.problem, which)
        self.counters.n_hvp += 1
        if analytic is not None:
            return self._check(analytic(x, y, v), out_size, x, y, which)
        if not self.problem.fd_fallback:
            raise CapabilityError(f"problem {self.problem.name!r} has no {which} and fallback is disabled")
        if not np.any(v):
            return np.zeros(out_size)
        kind, _, target = which.partition("_xy_") if "_xy_" in which else which.partition("_yy_")
        upper = target == "F"
        gy = self.grad_F_y if upper else self.grad_f_y
        gx = self.grad_F_x if upper else self.grad_f_x
        if kind == "jvp":
            eps = default_fd_step(x)
            return (gy(x + eps * v, y) - gy(x - eps * v, y)) / (2 * eps)
        eps = default_fd_step(y)
        g = gy if kind == "hvp" else gx
        return (g(x, y + eps * v) - g(x, y - eps * v)) / (2 * eps)

    def hvp_yy_f(self, x, y, v) -> Vector:
        return self._product("hvp_yy_f", x, y, v, self.n, self.n)

    def chvp_xy_f(self, x, y, v) -> Vector:
        return self._product("chvp_xy_f", x, y, v, self.m, self.n)

    def jvp_xy_f(self, x, y, u) -> Vector:
        return self._product("jvp_xy_f", x, y, u, self.n, self.m)

    def hvp_yy_F(self, x, y, v) -> Vector:
        return self._product("hvp_yy_F", x, y, v, self.n, self.n)

    def chvp_xy_F(self, x, y, v) -> Vector:
        return self._product("chvp_xy_F", x, y, v, self.m, self.n)

    def jvp_xy_F(self, x, y, u) -> Vector:
        return self._product("jvp_xy_F", x, y, u, self.n, self.m)


def as_oracles(p) -> Oracles:
    """Reuse an existing counted view, or open a fresh one for a problem."""
    if isinstance(p, Oracles):
        return p
    if isinstance(p, BilevelProblem):
        return Oracles(p)
    problem = getattr(p, "problem", None)
    if isinstance(problem, BilevelProblem):  # BenchmarkProblem
        return Oracles(problem)
    raise TypeError(f"cannot build oracles from {type(p).__name__}")


def eval_objectives(p, x, y) -> tuple[float, float]:
    """Return ``(F(x, y), f(x, y))``."""
    o = as_oracles(p)
    return o.F(x, y), o.f(x, y)


def finite_diff_second_order(p, x, y, v, eps: float) -> tuple[Vector, Vector]:
    """Central-difference ``(d2f/dydy') v`` and ``(d2f/dydx')' v`` from gradients only."""
    if not eps > 0:
        raise ContractViolation(f"finite-difference step must be positive, got {eps}")
    o = as_oracles(p)
    x, y = o._xy(x, y)
    v = _vec(v, o.n, "v")
    yp, ym = y + eps * v, y - eps * v
    hv = (o.grad_f_y(x, yp) - o.grad_f_y(x, ym)) / (2 * eps)
    cv = (o.grad_f_x(x, yp) - o.grad_f_x(x, ym)) / (2 * eps)
    return hv, cv

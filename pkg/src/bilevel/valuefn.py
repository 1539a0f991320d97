"""Value-function best response with a log barrier (first-order only).

For fixed ``x``:

    psi_mu(x)  = min_y f(x, y) + mu1/2 ||y||^2 + mu2
    phi(x)     = min_y F(x, y) + theta/2 ||y||^2 - tau * ln(psi_mu(x) - f(x, y))

Both inner problems are solved by gradient descent.  The hypergradient is
the envelope derivative of ``phi`` with ``d psi_mu / dx = df/dx(x, y_ll)``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .dynamics import _guard
from .errors import BarrierInfeasibleError, ContractViolation
from .problem import as_oracles
from .report import HypergradReport

MAX_HALVINGS = 60
GRAD_TOL = 1e-10


@dataclass(frozen=True)
class BarrierParams:
    mu1: float = 0.1
    mu2: float = 0.1
    theta: float = 0.1
    tau: float = 0.1
    decay: float = 0.5

    def __post_init__(self):
        if min(self.mu1, self.mu2, self.theta, self.tau) <= 0:
            raise ContractViolation("barrier parameters must be strictly positive")
        if not 0 < self.decay < 1:
            raise ContractViolation("decay must lie in (0, 1)")

    def at_stage(self, stage: int) -> "BarrierParams":
        """Parameters after ``stage`` geometric decays (stage 0 is the base)."""
        s = self.decay ** stage
        return replace(self, mu1=self.mu1 * s, mu2=self.mu2 * s, theta=self.theta * s, tau=self.tau * s)


def ll_value(p, x, params: BarrierParams, Q1: int, eta: float, y_init=None, tol: float = GRAD_TOL):
    """``(psi_mu, y_ll)`` after at most ``Q1`` descent steps on the regularized LL objective."""
    if Q1 < 1:
        raise ContractViolation("Q1 must be >= 1")
    o = as_oracles(p)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.zeros(o.n) if y_init is None else np.array(y_init, dtype=float)
    for t in range(1, Q1 + 1):
        g = o.grad_f_y(x, y) + params.mu1 * y
        if np.linalg.norm(g) <= tol:
            break
        y = _guard(y - eta * g, t)
    psi = o.f(x, y) + 0.5 * params.mu1 * float(y @ y) + params.mu2
    return psi, y


def barrier_objective(p, x, y, psi: float, params: BarrierParams) -> float:
    o = as_oracles(p)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    gap = psi - o.f(x, y)
    if not gap > 0:
        raise BarrierInfeasibleError(gap)
    return o.F(x, y) + 0.5 * params.theta * float(y @ y) - params.tau * np.log(gap)


def _barrier_grad(o, x, y, psi, params):
    gap = psi - o.f(x, y)
    return o.grad_F_y(x, y) + params.theta * y + params.tau * o.grad_f_y(x, y) / gap


def minimize_barrier(p, x, psi: float, params: BarrierParams, Q2: int, eta: float, y_start,
                     tol: float = GRAD_TOL):
    """Descent on the barrier objective, halving each step until it is feasible and non-increasing."""
    o = as_oracles(p)
    y = np.array(y_start, dtype=float)
    value = barrier_objective(o, x, y, psi, params)
    for t in range(1, Q2 + 1):
        g = _barrier_grad(o, x, y, psi, params)
        if np.linalg.norm(g) <= tol:
            break
        s = eta
        for _ in range(MAX_HALVINGS):
            cand = y - s * g
            if psi - o.f(x, cand) > 0:
                cand_value = barrier_objective(o, x, cand, psi, params)
                if cand_value <= value:
                    y, value = _guard(cand, t), cand_value
                    break
            s *= 0.5
        else:
            break  # no acceptable step: stationary to working precision
    return y, value


def barrier_value(p, x, params: BarrierParams, Q1: int, Q2: int, eta: float) -> float:
    """Numerically evaluated ``phi_{mu, theta, tau}(x)`` from cold starts."""
    o = as_oracles(p)
    psi, y_ll = ll_value(o, x, params, Q1, eta)
    _, value = minimize_barrier(o, x, psi, params, Q2, eta, y_ll)
    return value


def bvfim_hypergrad(p, x, params: BarrierParams, Q1: int, Q2: int, eta: float,
                    y_ll_init=None, y_br_init=None) -> HypergradReport:
    """Envelope hypergradient of the barrier value function.

    ``y_ll_init`` / ``y_br_init`` warm-start the two inner solves; an
    infeasible ``y_br_init`` falls back to the LL minimizer, which is always
    strictly feasible because ``mu2 > 0``.
    """
    if Q1 < 1 or Q2 < 1:
        raise ContractViolation("Q1 and Q2 must be >= 1")
    o = as_oracles(p)
    start = o.counters.snapshot()
    x = np.atleast_1d(np.asarray(x, dtype=float))
    psi, y_ll = ll_value(o, x, params, Q1, eta, y_ll_init)
    y0 = y_ll
    if y_br_init is not None and psi - o.f(x, y_br_init) > 0:
        y0 = np.array(y_br_init, dtype=float)
    y_br, value = minimize_barrier(o, x, psi, params, Q2, eta, y0)
    gap = psi - o.f(x, y_br)
    if not gap > 0:
        raise BarrierInfeasibleError(gap)
    direct = o.grad_F_x(x, y_br)
    indirect = params.tau * (o.grad_f_x(x, y_br) - o.grad_f_x(x, y_ll)) / gap
    return HypergradReport(direct, indirect, "bvfim", T=Q1 + Q2, counters=o.counters - start,
                           peak_iterates=2, y=y_br,
                           info={"psi": psi, "barrier_value": value, "gap": gap, "y_ll": y_ll})

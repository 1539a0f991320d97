"""Hypergradients obtained by differentiating through the unrolled LL dynamics.

All four routines compute (approximations of) the derivative of
``phi_T(x) = F(x, y_T(x))``:

* :func:`fad_hypergrad` propagates the sensitivity panel ``Z_t = dy_t/dx``
  forward, ``Z_t = A_t Z_{t-1} + B_t``;
* :func:`rad_hypergrad` runs the adjoint recursion backwards over a stored
  trajectory;
* :func:`trad_hypergrad` keeps only the last ``M`` stages of that recursion;
* :func:`one_stage_hypergrad` differentiates a single unit gradient step,
  optionally replacing the mixed second derivative by a central difference.
"""

from __future__ import annotations

import numpy as np

from .dynamics import InitMap, LLScheme, StepJacobian, Trajectory, step, unroll
from .errors import ContractViolation
from .problem import as_oracles
from .report import HypergradReport


def _x(x) -> np.ndarray:
    return np.atleast_1d(np.asarray(x, dtype=float))


def fad_hypergrad(p, scheme: LLScheme, init_map: InitMap, x, T: int) -> HypergradReport:
    o = as_oracles(p)
    start = o.counters.snapshot()
    x = _x(x)
    y = init_map(x, o.n)
    Z = init_map.jacobian(o.m, o.n)
    for t in range(1, T + 1):
        J = StepJacobian(o, scheme, x, y, t)
        Z = J.A_panel(Z) + J.B_panel(o.m)
        y = step(o, scheme, x, y, t)
    direct = o.grad_F_x(x, y)
    indirect = Z.T @ o.grad_F_y(x, y)
    return HypergradReport(direct, indirect, "fad", T=T, counters=o.counters - start,
                           peak_iterates=2, peak_panels=1, y=y)


def _check_trajectory(traj: Trajectory, scheme: LLScheme, x, T: int):
    if traj.T != T or not np.array_equal(traj.x_at_solve, x):
        raise ContractViolation("trajectory was recorded for a different x or horizon")
    if any(traj.eta_seq[t - 1] != scheme.eta_at(t) for t in range(max(traj.t0, 1), T + 1)):
        raise ContractViolation("trajectory step sizes do not match the scheme")


def _backward(o, scheme, x, traj: Trajectory, t_stop: int, lam):
    """Adjoint sweep over t = T..t_stop; returns (sum of B_t' lam_t, lam_{t_stop - 1})."""
    acc = np.zeros(o.m)
    for t in range(traj.T, t_stop - 1, -1):
        J = StepJacobian(o, scheme, x, traj.y_at(t - 1), t)
        acc = acc + J.BT(lam)
        lam = J.AT(lam)
    return acc, lam


def rad_hypergrad(p, scheme: LLScheme, init_map: InitMap, x, T: int,
                  trajectory: Trajectory | None = None, first_order: bool = False) -> HypergradReport:
    """Reverse-mode hypergradient over the full trajectory.

    ``first_order=True`` replaces every ``A_t`` by ``I`` and every ``B_t``
    (t >= 1) by zero, which reproduces the first-order initialization-based
    estimate.
    """
    o = as_oracles(p)
    start = o.counters.snapshot()
    x = _x(x)
    traj = trajectory if trajectory is not None else unroll(o, scheme, init_map, x, T)
    _check_trajectory(traj, scheme, x, T)
    if traj.t0 != 0:
        raise ContractViolation("full reverse mode needs the whole trajectory")
    y_T = traj.y_final
    direct = o.grad_F_x(x, y_T)
    lam = o.grad_F_y(x, y_T)
    if first_order:
        indirect = init_map.vjp(lam, o.m)
    else:
        acc, lam = _backward(o, scheme, x, traj, 1, lam)
        indirect = acc + init_map.vjp(lam, o.m)
    return HypergradReport(direct, indirect, "first_order_rad" if first_order else "rad", T=T,
                           counters=o.counters - start, peak_iterates=len(traj.y_seq), y=np.array(y_T))


def trad_hypergrad(p, scheme: LLScheme, init_map: InitMap, x, T: int, M: int) -> HypergradReport:
    """Truncated reverse mode over the last ``M`` stages.

    Only ``M + 1`` iterates are retained during the forward pass.  With
    ``M == T`` the sweep reaches ``y_0`` and the ``Psi_0`` term is included,
    so the result equals full reverse mode.
    """
    if not 1 <= M <= T:
        raise ContractViolation(f"truncation window must satisfy 1 <= M <= T, got M={M}, T={T}")
    o = as_oracles(p)
    start = o.counters.snapshot()
    x = _x(x)
    traj = unroll(o, scheme, init_map, x, T, keep_last=M + 1)
    _check_trajectory(traj, scheme, x, T)
    y_T = traj.y_final
    direct = o.grad_F_x(x, y_T)
    lam = o.grad_F_y(x, y_T)
    acc, lam = _backward(o, scheme, x, traj, T - M + 1, lam)
    indirect = acc + init_map.vjp(lam, o.m) if M == T else acc
    return HypergradReport(direct, indirect, "trad", T=T, M=M, counters=o.counters - start,
                           peak_iterates=len(traj.y_seq), y=np.array(y_T))


def one_stage_hypergrad(p, x, y0, mode: str = "exact", eps: float | None = None) -> HypergradReport:
    """Hypergradient of ``F(x, y0 - df/dy(x, y0))`` for a fixed ``y0``.

    ``mode="fd"`` replaces the mixed-Hessian product by a central difference
    of ``df/dx`` along ``dF/dy_1``; ``eps`` defaults to the unit step size.
    """
    o = as_oracles(p)
    start = o.counters.snapshot()
    x = _x(x)
    y0 = _x(y0)
    y1 = y0 - o.grad_f_y(x, y0)
    direct = o.grad_F_x(x, y1)
    lam = o.grad_F_y(x, y1)
    if mode == "exact":
        indirect = -o.chvp_xy_f(x, y0, lam)
    elif mode == "fd":
        eps = 1.0 if eps is None else eps
        if not eps > 0:
            raise ContractViolation(f"finite-difference step must be positive, got {eps}")
        if not np.any(lam):
            indirect = np.zeros(o.m)
        else:
            plus = o.grad_f_x(x, y0 + eps * lam)
            minus = o.grad_f_x(x, y0 - eps * lam)
            indirect = -(plus - minus) / (2 * eps)
    else:
        raise ContractViolation(f"unknown one-stage mode {mode!r}")
    return HypergradReport(direct, indirect, f"one_stage_{mode}", T=1, counters=o.counters - start,
                           peak_iterates=2, y=y1, info={"eps": eps} if mode == "fd" else {})

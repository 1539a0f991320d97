"""Initialization-based explicit methods: x enters the LL dynamics only via ``y_0``."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .dynamics import GD, LAYERWISE, InitMap, LLScheme, Trajectory, unroll
from .errors import ContractViolation
from .problem import as_oracles
from .recurrent import _check_trajectory
from .report import HypergradReport

FIRST_ORDER = "first_order"
REPTILE = "reptile"


@dataclass(frozen=True)
class InitBasedConfig:
    T: int = 5
    eta: float = 0.5
    eta_schedule: str = "constant"
    variant: str = FIRST_ORDER
    alpha: Optional[float] = None             # reptile scale, defaults to the first step size
    step_weights: Optional[np.ndarray] = None  # reptile weights over t = 1..T
    omega: Optional[np.ndarray] = None         # layerwise preconditioner
    learn_omega: bool = False

    def __post_init__(self):
        if self.variant not in (FIRST_ORDER, REPTILE, LAYERWISE):
            raise ContractViolation(f"unknown variant {self.variant!r}")
        if self.alpha is not None and not self.alpha > 0:
            raise ContractViolation("reptile alpha must be positive")
        if self.variant == LAYERWISE and self.omega is None:
            raise ContractViolation("layerwise variant needs omega")

    def scheme(self) -> LLScheme:
        if self.variant == LAYERWISE:
            return LLScheme(LAYERWISE, eta=self.eta, eta_schedule=self.eta_schedule, omega=self.omega)
        return LLScheme(GD, eta=self.eta, eta_schedule=self.eta_schedule)


def _init_map(o, init_map):
    if init_map is not None:
        return init_map
    if o.n != o.m:
        raise ContractViolation(f"identity initialization needs n == m (got n={o.n}, m={o.m}); pass an affine map")
    return InitMap.identity()


def init_based_unroll(p, cfg: InitBasedConfig, x, init_map: InitMap | None = None) -> Trajectory:
    o = as_oracles(p)
    return unroll(o, cfg.scheme(), _init_map(o, init_map), x, cfg.T)


def first_order_hypergrad(p, cfg: InitBasedConfig, x, init_map: InitMap | None = None,
                          trajectory: Trajectory | None = None) -> HypergradReport:
    """``dF/dx + (dPsi_0/dx)' dF/dy_T`` -- the Hessian terms are dropped."""
    o = as_oracles(p)
    start = o.counters.snapshot()
    x = np.atleast_1d(np.asarray(x, dtype=float))
    imap = _init_map(o, init_map)
    traj = trajectory if trajectory is not None else unroll(o, cfg.scheme(), imap, x, cfg.T)
    y_T = traj.y_final
    direct = o.grad_F_x(x, y_T)
    indirect = imap.vjp(o.grad_F_y(x, y_T), o.m)
    return HypergradReport(direct, indirect, "first_order", T=cfg.T, counters=o.counters - start,
                           peak_iterates=len(traj.y_seq), y=np.array(y_T))


def reptile_direction(p, cfg: InitBasedConfig, x, trajectory: Trajectory | None = None) -> np.ndarray:
    """``sum_t w_t (x - y_t) / alpha``; the default weights select the final step only."""
    o = as_oracles(p)
    if o.n != o.m:
        raise ContractViolation("the difference direction needs n == m")
    alpha = cfg.alpha if cfg.alpha is not None else cfg.scheme().eta_at(1)
    if not alpha > 0:
        raise ContractViolation("reptile alpha must be positive")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    traj = trajectory if trajectory is not None else init_based_unroll(o, cfg, x)
    if cfg.step_weights is None:
        return (x - traj.y_final) / alpha
    w = np.asarray(cfg.step_weights, dtype=float)
    if w.shape != (cfg.T,):
        raise ContractViolation(f"step_weights must have length T={cfg.T}")
    out = np.zeros(o.m)
    for t in range(1, cfg.T + 1):
        out = out + w[t - 1] * (x - traj.y_at(t))
    return out / alpha


def layerwise_hypergrad(p, cfg: InitBasedConfig, x, init_map: InitMap | None = None) -> HypergradReport:
    """Reverse-mode gradient with respect to ``(x, omega)`` for the preconditioned unroll.

    ``y_t = y_{t-1} - eta_t * omega * df/dy(y_{t-1})`` with ``x`` entering
    only through ``y_0``.  The returned ``total`` has ``m + n`` entries,
    the UL part first.
    """
    if cfg.variant != LAYERWISE:
        raise ContractViolation("layerwise_hypergrad needs the layerwise variant")
    o = as_oracles(p)
    start = o.counters.snapshot()
    x = np.atleast_1d(np.asarray(x, dtype=float))
    imap = _init_map(o, init_map)
    scheme = cfg.scheme()
    traj = unroll(o, scheme, imap, x, cfg.T)
    _check_trajectory(traj, scheme, x, cfg.T)
    omega = scheme.omega
    y_T = traj.y_final
    lam = o.grad_F_y(x, y_T)
    g_omega = np.zeros(o.n)
    for t in range(cfg.T, 0, -1):
        y_prev = traj.y_at(t - 1)
        eta = traj.eta_seq[t - 1]
        g_omega = g_omega - eta * o.grad_f_y(x, y_prev) * lam
        lam = lam - eta * o.hvp_yy_f(x, y_prev, omega * lam)
    direct = np.concatenate([o.grad_F_x(x, y_T), np.zeros(o.n)])
    indirect = np.concatenate([imap.vjp(lam, o.m), g_omega])
    return HypergradReport(direct, indirect, "layerwise", T=cfg.T, counters=o.counters - start,
                           peak_iterates=len(traj.y_seq), y=np.array(y_T),
                           info={"learn_omega": cfg.learn_omega})

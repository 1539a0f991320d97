"""Implicit hypergradients: solve ``H q = dF/dy`` at an LL stationary point.

The indirect gradient is ``-(d2f/dydx')' q``.  The linear system is solved
matrix-free either by conjugate gradient or by a truncated Neumann series.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ContractionError, ContractViolation, NonConvergenceError
from .problem import as_oracles
from .report import HypergradReport

CG = "cg"
NEUMANN = "neumann"
GROWTH_LIMIT = 1e8


@dataclass(frozen=True)
class LinearSolveConfig:
    method: str = CG
    max_iters: int = 100
    tol: float = 1e-10
    accept_partial: bool = False
    stationarity_rtol: float = 1e-4
    power_iters: int = 10

    def __post_init__(self):
        if self.method not in (CG, NEUMANN):
            raise ContractViolation(f"unknown linear solver {self.method!r}")
        if self.max_iters < 1 or not self.tol > 0:
            raise ContractViolation("need max_iters >= 1 and tol > 0")


@dataclass
class CGResult:
    x: np.ndarray
    iterations: int
    residual: float
    converged: bool
    cond_estimate: float | None


def _lanczos_cond(alphas, betas):
    k = len(alphas)
    if k == 0:
        return None
    diag = np.empty(k)
    off = np.empty(max(k - 1, 0))
    for j in range(k):
        diag[j] = 1.0 / alphas[j] + (betas[j - 1] / alphas[j - 1] if j > 0 else 0.0)
        if j < k - 1:
            off[j] = np.sqrt(betas[j]) / alphas[j]
    ev = np.linalg.eigvalsh(np.diag(diag) + np.diag(off, 1) + np.diag(off, -1))
    lo, hi = float(ev[0]), float(ev[-1])
    return hi / lo if lo > 0 else float("inf")


def conjugate_gradient(matvec: Callable, b: np.ndarray, max_iters: int, tol: float) -> CGResult:
    """Plain CG for a symmetric positive (semi-)definite operator.

    Stops when ``||A q - b|| <= tol``.  The condition number estimate comes
    from the Lanczos tridiagonal implied by the CG coefficients.
    """
    b = np.asarray(b, dtype=float)
    q = np.zeros_like(b)
    r = b.copy()
    rr = float(r @ r)
    if np.sqrt(rr) <= tol:
        return CGResult(q, 0, float(np.sqrt(rr)), True, None)
    d = r.copy()
    alphas, betas = [], []
    k = 0
    while k < max_iters:
        Ad = matvec(d)
        dAd = float(d @ Ad)
        if dAd <= 0:
            break  # operator not positive definite along d
        alpha = rr / dAd
        q = q + alpha * d
        r = r - alpha * Ad
        rr_new = float(r @ r)
        alphas.append(alpha)
        k += 1
        if np.sqrt(rr_new) <= tol:
            rr = rr_new
            break
        beta = rr_new / rr
        betas.append(beta)
        d = r + beta * d
        rr = rr_new
    res = float(np.sqrt(rr))
    return CGResult(q, k, res, res <= tol, _lanczos_cond(alphas, betas))


def power_iteration(matvec: Callable, n: int, iters: int = 10, seed: int = 0) -> float:
    """Estimate of the largest eigenvalue magnitude of a symmetric operator."""
    v = np.random.default_rng(seed).standard_normal(n)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = matvec(v)
        lam = float(np.linalg.norm(w))
        if lam == 0:
            return 0.0
        v = w / lam
    return lam


def neumann_inverse_hvp(p, x, y, v, J: int, scale: float = 1.0) -> np.ndarray:
    """``scale * sum_{j<J} (I - scale*H)^j v`` via ``s_{j+1} = v + (I - scale*H) s_j``.

    With ``scale = 1`` this is the plain truncated series for ``H^{-1} v``.
    """
    if J < 1:
        raise ContractViolation("need at least one Neumann term")
    o = as_oracles(p)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    v = np.atleast_1d(np.asarray(v, dtype=float))
    s = v.copy()
    prev = np.linalg.norm(s)
    for j in range(1, J):
        s = v + s - scale * o.hvp_yy_f(x, y, s)
        norm = np.linalg.norm(s)
        if not np.isfinite(norm) or (norm > GROWTH_LIMIT and norm > prev):
            raise ContractionError(f"Neumann partial sum grew to {norm:.3e} after {j} terms")
        prev = norm
    return scale * s


def ift_hypergrad(p, x, y_approx, cfg: LinearSolveConfig = LinearSolveConfig()) -> HypergradReport:
    o = as_oracles(p)
    start = o.counters.snapshot()
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y_approx, dtype=float))
    rhs = o.grad_F_y(x, y)
    stationarity = float(np.linalg.norm(o.grad_f_y(x, y)))
    threshold = cfg.stationarity_rtol * (1 + float(np.linalg.norm(rhs)))
    info = {"stationarity_residual": stationarity, "stationarity_warning": stationarity > threshold}
    hvp = lambda v: o.hvp_yy_f(x, y, v)
    if cfg.method == CG:
        res = conjugate_gradient(hvp, rhs, cfg.max_iters, cfg.tol)
        q = res.x
        info.update(iterations=res.iterations, residual=res.residual, cond_estimate=res.cond_estimate)
        if not res.converged and not cfg.accept_partial:
            raise NonConvergenceError(
                f"CG residual {res.residual:.3e} above {cfg.tol:.1e} after {res.iterations} iterations",
                solution=q, residual=res.residual, iterations=res.iterations)
    else:
        if not np.any(rhs):
            q = np.zeros(o.n)
            scale = 1.0
        else:
            lam_max = power_iteration(hvp, o.n, cfg.power_iters)
            scale = 1.0 / lam_max if lam_max > 0 else 1.0
            q = neumann_inverse_hvp(o, x, y, rhs, cfg.max_iters, scale)
        info.update(iterations=cfg.max_iters, neumann_scale=scale,
                    residual=float(np.linalg.norm(hvp(q) - rhs)), cond_estimate=None)
    direct = o.grad_F_x(x, y)
    indirect = -o.chvp_xy_f(x, y, q)
    return HypergradReport(direct, indirect, f"ift_{cfg.method}", counters=o.counters - start,
                           peak_iterates=2, y=y, info=info)

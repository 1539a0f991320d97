"""Named benchmark instances with closed-form oracles where they exist."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, ContractViolation
from .problem import OPTIMISTIC, PESSIMISTIC, SINGLETON, BilevelProblem


@dataclass(frozen=True)
class BenchmarkProblem:
    name: str
    problem: BilevelProblem
    formulation: str = SINGLETON
    y_star: Optional[Callable] = None
    phi: Optional[Callable] = None
    grad_phi: Optional[Callable] = None
    psi: Optional[Callable] = None          # LL value function min_y f(x, y)
    x_opt: Optional[np.ndarray] = None
    y_opt: Optional[np.ndarray] = None
    lipschitz: Optional[float] = None        # of df/dy in y; default LL step is 1/L
    extras: dict = field(default_factory=dict)

    @property
    def m(self) -> int:
        return self.problem.m

    @property
    def n(self) -> int:
        return self.problem.n

    @property
    def default_eta(self) -> float:
        return 1.0 / self.lipschitz if self.lipschitz else 0.5


def _validate(bp: BenchmarkProblem, seed: int = 0, count: int = 10, scale: float = 2.0):
    """Check the closed forms against stationarity and finite differences."""
    rng = np.random.default_rng(seed)
    p = bp.problem
    for _ in range(count):
        x = rng.uniform(-scale, scale, p.m)
        if bp.y_star is not None:
            r = np.linalg.norm(p.grad_f_y(x, bp.y_star(x)))
            if r >= 1e-10:
                raise ContractViolation(f"{bp.name}: y_star is not stationary (residual {r:.2e})")
        if bp.phi is not None and bp.grad_phi is not None:
            g = bp.grad_phi(x)
            h = 1e-6 * (1 + np.linalg.norm(x))
            fd = np.array([(bp.phi(x + h * e) - bp.phi(x - h * e)) / (2 * h) for e in np.eye(p.m)])
            if np.linalg.norm(fd - g) > 1e-5 * (1 + np.linalg.norm(g)):
                raise ContractViolation(f"{bp.name}: grad_phi disagrees with finite differences")
    return bp


def make_quad_lls(m: int = 1, A=None, b=None) -> BenchmarkProblem:
    """``f = 1/2||y - A x||^2``, ``F = 1/2||y - b||^2``; ``y*(x) = A x``."""
    A = np.eye(m) if A is None else np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape[1] != m:
        raise ContractViolation(f"A must have {m} columns, got shape {A.shape}")
    n = A.shape[0]
    b = np.ones(n) if b is None else np.atleast_1d(np.asarray(b, dtype=float))
    if b.shape != (n,):
        raise ContractViolation(f"b must have length {n}")
    if np.linalg.matrix_rank(A) < m:
        raise ContractViolation("A must have full column rank for a unique best response")
    AtA = A.T @ A
    x_opt = np.linalg.solve(AtA, A.T @ b)

    problem = BilevelProblem(
        m=m, n=n,
        F=lambda x, y: 0.5 * float(np.dot(y - b, y - b)),
        f=lambda x, y: 0.5 * float(np.dot(y - A @ x, y - A @ x)),
        grad_F_x=lambda x, y: np.zeros(m),
        grad_F_y=lambda x, y: y - b,
        grad_f_x=lambda x, y: -A.T @ (y - A @ x),
        grad_f_y=lambda x, y: y - A @ x,
        hvp_yy_f=lambda x, y, v: np.array(v, dtype=float),
        chvp_xy_f=lambda x, y, v: -A.T @ v,
        jvp_xy_f=lambda x, y, u: -A @ u,
        hvp_yy_F=lambda x, y, v: np.array(v, dtype=float),
        chvp_xy_F=lambda x, y, v: np.zeros(m),
        jvp_xy_F=lambda x, y, u: np.zeros(n),
        name="quad_lls",
    )
    return _validate(BenchmarkProblem(
        name="quad_lls", problem=problem, formulation=SINGLETON,
        y_star=lambda x: A @ x,
        phi=lambda x: 0.5 * float(np.dot(A @ x - b, A @ x - b)),
        grad_phi=lambda x: A.T @ (A @ x - b),
        psi=lambda x: 0.0,
        x_opt=x_opt, y_opt=A @ x_opt, lipschitz=1.0,
        extras={"A": A, "b": b},
    ))


def _non_lls_common():
    """Shared LL objective ``f = 1/2 y1^2 - x y1``; ``y2`` is free."""
    f = lambda x, y: 0.5 * y[0] ** 2 - x[0] * y[0]
    grad_f_x = lambda x, y: np.array([-y[0]])
    grad_f_y = lambda x, y: np.array([y[0] - x[0], 0.0])
    hvp_yy_f = lambda x, y, v: np.array([v[0], 0.0])
    chvp_xy_f = lambda x, y, v: np.array([-v[0]])
    jvp_xy_f = lambda x, y, u: np.array([-u[0], 0.0])
    return f, grad_f_x, grad_f_y, hvp_yy_f, chvp_xy_f, jvp_xy_f


def make_non_lls_1() -> BenchmarkProblem:
    """Counterexample without a singleton LL solution set.

    ``S(x) = {(x, t)}``.  Optimistic selection picks ``t = x`` so
    ``phi(x) = 1/2 (x - 1)^2`` with optimum ``x* = 1``; plain gradient
    descent never moves ``y2`` and instead minimizes
    ``1/2 x^2 + 1/2 (x - 1)^2`` (optimum 0.5).
    """
    f, gfx, gfy, hf, cf, jf = _non_lls_common()
    problem = BilevelProblem(
        m=1, n=2,
        F=lambda x, y: 0.5 * (y[0] - 1) ** 2 + 0.5 * (x[0] - y[1]) ** 2,
        f=f,
        grad_F_x=lambda x, y: np.array([x[0] - y[1]]),
        grad_F_y=lambda x, y: np.array([y[0] - 1, y[1] - x[0]]),
        grad_f_x=gfx, grad_f_y=gfy,
        hvp_yy_f=hf, chvp_xy_f=cf, jvp_xy_f=jf,
        hvp_yy_F=lambda x, y, v: np.array([v[0], v[1]], dtype=float),
        chvp_xy_F=lambda x, y, v: np.array([-v[1]]),
        jvp_xy_F=lambda x, y, u: np.array([0.0, -u[0]]),
        name="non_lls_1",
    )
    return _validate(BenchmarkProblem(
        name="non_lls_1", problem=problem, formulation=OPTIMISTIC,
        y_star=lambda x: np.array([x[0], x[0]]),
        phi=lambda x: 0.5 * (x[0] - 1) ** 2,
        grad_phi=lambda x: np.array([x[0] - 1]),
        psi=lambda x: -0.5 * x[0] ** 2,
        x_opt=np.array([1.0]), y_opt=np.array([1.0, 1.0]), lipschitz=1.0,
        extras={"gd_phi": lambda x, y2_0=0.0: 0.5 * (x[0] - 1) ** 2 + 0.5 * (x[0] - y2_0) ** 2,
                "gd_x_opt": np.array([0.5])},
    ))


def make_pess_1() -> BenchmarkProblem:
    """Pessimistic instance: the follower's free ``y2`` maximizes ``-1/2 y2^2 + x y2``.

    ``phi_pess(x) = 1/2 (x - 1)^2 + 1/2 x^2`` with optimum 0.5, while the
    optimistic value is unbounded below.
    """
    f, gfx, gfy, hf, cf, jf = _non_lls_common()
    problem = BilevelProblem(
        m=1, n=2,
        F=lambda x, y: 0.5 * (y[0] - 1) ** 2 - 0.5 * y[1] ** 2 + x[0] * y[1],
        f=f,
        grad_F_x=lambda x, y: np.array([y[1]]),
        grad_F_y=lambda x, y: np.array([y[0] - 1, x[0] - y[1]]),
        grad_f_x=gfx, grad_f_y=gfy,
        hvp_yy_f=hf, chvp_xy_f=cf, jvp_xy_f=jf,
        hvp_yy_F=lambda x, y, v: np.array([v[0], -v[1]], dtype=float),
        chvp_xy_F=lambda x, y, v: np.array([v[1]]),
        jvp_xy_F=lambda x, y, u: np.array([0.0, u[0]]),
        name="pess_1",
    )
    return _validate(BenchmarkProblem(
        name="pess_1", problem=problem, formulation=PESSIMISTIC,
        y_star=lambda x: np.array([x[0], x[0]]),
        phi=lambda x: 0.5 * (x[0] - 1) ** 2 + 0.5 * x[0] ** 2,
        grad_phi=lambda x: np.array([2 * x[0] - 1]),
        psi=lambda x: -0.5 * x[0] ** 2,
        x_opt=np.array([0.5]), y_opt=np.array([0.5, 0.5]), lipschitz=1.0,
    ))


def make_bilinear_minimax(a: float = 1.0) -> BenchmarkProblem:
    """``F = x y + a/2 x^2``, ``f = -x y + a/2 y^2``; ``y*(x) = x / a``."""
    if not a > 0:
        raise ContractViolation(f"curvature a must be positive, got {a}")
    problem = BilevelProblem(
        m=1, n=1,
        F=lambda x, y: x[0] * y[0] + 0.5 * a * x[0] ** 2,
        f=lambda x, y: -x[0] * y[0] + 0.5 * a * y[0] ** 2,
        grad_F_x=lambda x, y: np.array([y[0] + a * x[0]]),
        grad_F_y=lambda x, y: np.array([x[0]]),
        grad_f_x=lambda x, y: np.array([-y[0]]),
        grad_f_y=lambda x, y: np.array([a * y[0] - x[0]]),
        hvp_yy_f=lambda x, y, v: a * np.asarray(v, dtype=float),
        chvp_xy_f=lambda x, y, v: -np.asarray(v, dtype=float),
        jvp_xy_f=lambda x, y, u: -np.asarray(u, dtype=float),
        hvp_yy_F=lambda x, y, v: np.zeros(1),
        chvp_xy_F=lambda x, y, v: np.asarray(v, dtype=float),
        jvp_xy_F=lambda x, y, u: np.asarray(u, dtype=float),
        name="bilinear_minimax",
    )
    return _validate(BenchmarkProblem(
        name="bilinear_minimax", problem=problem, formulation=SINGLETON,
        y_star=lambda x: x / a,
        phi=lambda x: x[0] ** 2 / a + 0.5 * a * x[0] ** 2,
        grad_phi=lambda x: (2 / a + a) * x,
        psi=lambda x: -x[0] ** 2 / (2 * a),
        x_opt=np.zeros(1), y_opt=np.zeros(1), lipschitz=a,
        extras={"a": a},
    ))


def _sigmoid(z):
    return 0.5 * (1 + np.tanh(0.5 * z))


def _blobs(rng, n_tr, n_val, n_feat):
    def draw(count):
        labels = np.where(rng.random(count) < 0.5, -1.0, 1.0)
        centers = np.outer(labels, np.ones(n_feat))
        feats = centers + rng.normal(scale=1.0, size=(count, n_feat))
        return np.hstack([feats, np.ones((count, 1))]), labels
    return draw(n_tr), draw(n_val)


def make_hyperclean(seed: int = 7, n_tr: int = 40, n_val: int = 40, n_feat: int = 2,
                    corrupt_frac: float = 0.3) -> BenchmarkProblem:
    """Data hyper-cleaning on two Gaussian blobs.

    ``x_i`` is a logit weighting training sample ``i``; ``y`` holds the
    linear classifier (features plus bias).  The LL loss is the
    sigmoid-weighted training cross-entropy with ``1e-2 ||y||^2``; the UL
    loss is the mean validation cross-entropy.
    """
    if not 0 <= corrupt_frac < 1:
        raise ContractViolation("corrupt_frac must lie in [0, 1)")
    if min(n_tr, n_val, n_feat) < 1:
        raise ContractViolation("sizes must be >= 1")
    reg = 1e-2
    s = seed
    while True:
        rng = np.random.default_rng(s)
        (a_tr, l_tr), (a_val, l_val) = _blobs(rng, n_tr, n_val, n_feat)
        if len(set(l_tr)) == 2 and len(set(l_val)) == 2:
            break
        s += 1
    n_bad = int(round(corrupt_frac * n_tr))
    corrupted = np.sort(rng.choice(n_tr, size=n_bad, replace=False)) if n_bad else np.array([], dtype=int)
    l_noisy = l_tr.copy()
    l_noisy[corrupted] *= -1
    n = n_feat + 1

    # per-sample binary cross-entropy log(1 + exp(-l a.y)) and its pieces
    def margins(y, a, l):
        return l * (a @ y)

    def ce(y, a, l):
        return np.logaddexp(0.0, -margins(y, a, l))

    def ce_grad_coef(y, a, l):  # d ce_i / dy = coef_i * a_i
        return -l * _sigmoid(-margins(y, a, l))

    def ce_curv(y, a, l):  # d2 ce_i / dy dy' = curv_i a_i a_i'
        p = _sigmoid(margins(y, a, l))
        return p * (1 - p)

    def f(x, y):
        return float(_sigmoid(x) @ ce(y, a_tr, l_noisy) + reg * y @ y)

    def grad_f_y(x, y):
        return a_tr.T @ (_sigmoid(x) * ce_grad_coef(y, a_tr, l_noisy)) + 2 * reg * y

    def grad_f_x(x, y):
        sx = _sigmoid(x)
        return sx * (1 - sx) * ce(y, a_tr, l_noisy)

    def hvp_yy_f(x, y, v):
        w = _sigmoid(x) * ce_curv(y, a_tr, l_noisy)
        return a_tr.T @ (w * (a_tr @ v)) + 2 * reg * v

    def chvp_xy_f(x, y, v):
        sx = _sigmoid(x)
        return sx * (1 - sx) * ce_grad_coef(y, a_tr, l_noisy) * (a_tr @ v)

    def jvp_xy_f(x, y, u):
        sx = _sigmoid(x)
        return a_tr.T @ (sx * (1 - sx) * ce_grad_coef(y, a_tr, l_noisy) * u)

    def F(x, y):
        return float(np.mean(ce(y, a_val, l_val)))

    def grad_F_y(x, y):
        return a_val.T @ ce_grad_coef(y, a_val, l_val) / n_val

    def hvp_yy_F(x, y, v):
        return a_val.T @ (ce_curv(y, a_val, l_val) * (a_val @ v)) / n_val

    problem = BilevelProblem(
        m=n_tr, n=n,
        F=F, f=f,
        grad_F_x=lambda x, y: np.zeros(n_tr), grad_F_y=grad_F_y,
        grad_f_x=grad_f_x, grad_f_y=grad_f_y,
        hvp_yy_f=hvp_yy_f, chvp_xy_f=chvp_xy_f, jvp_xy_f=jvp_xy_f,
        hvp_yy_F=hvp_yy_F,
        chvp_xy_F=lambda x, y, v: np.zeros(n_tr),
        jvp_xy_F=lambda x, y, u: np.zeros(n),
        name="hyperclean",
    )
    # Lipschitz bound of df/dy: sum_i sigmoid(x_i)/4 ||a_i||^2 + 2 reg with sigmoid <= 1
    lip = 0.25 * float(np.sum(a_tr * a_tr)) + 2 * reg
    mask = np.zeros(n_tr, dtype=bool)
    mask[corrupted] = True
    return BenchmarkProblem(
        name="hyperclean", problem=problem, formulation=SINGLETON, lipschitz=lip,
        extras={"a_tr": a_tr, "labels_clean": l_tr, "labels_noisy": l_noisy,
                "a_val": a_val, "labels_val": l_val, "corrupted": mask, "reg": reg, "seed_used": s},
    )


REGISTRY = {
    "quad_lls": make_quad_lls,
    "non_lls_1": make_non_lls_1,
    "pess_1": make_pess_1,
    "hyperclean": make_hyperclean,
    "bilinear_minimax": make_bilinear_minimax,
}


def make_problem(name: str, **params) -> BenchmarkProblem:
    try:
        ctor = REGISTRY[name]
    except KeyError:
        raise ConfigError(f"unknown problem {name!r}; known: {', '.join(REGISTRY)}") from None
    return ctor(**params)

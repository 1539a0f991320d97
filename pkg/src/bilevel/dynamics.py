"""LL dynamical system ``y_t = Psi_t(y_{t-1}; x)`` and its linearization.

Four update rules share one code path: plain gradient descent on ``f``,
optimistic aggregation ``rho*dF + (1-rho)*df``, pessimistic aggregation
``-rho*dF + (1-rho)*df`` and a diagonally preconditioned descent.
"""

from __future__ import annotations

import csv
import io
from collections import deque
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ContractViolation, DivergenceError
from .problem import Oracles, Vector, as_oracles
from .schedules import schedule_value

DIVERGENCE_LIMIT = 1e8

GD = "gd"
OPTIMISTIC_AGG = "optimistic"
PESSIMISTIC_AGG = "pessimistic"
LAYERWISE = "layerwise"
SCHEME_KINDS = (GD, OPTIMISTIC_AGG, PESSIMISTIC_AGG, LAYERWISE)


@dataclass(frozen=True)
class InitMap:
    """``y_0 = Psi_0(x)``: a constant, the identity (n == m) or ``C x + c``."""

    kind: str = "constant"
    y0: Optional[Vector] = None
    C: Optional[np.ndarray] = None
    c: Optional[Vector] = None

    @classmethod
    def constant(cls, y0) -> "InitMap":
        return cls("constant", y0=np.atleast_1d(np.asarray(y0, dtype=float)))

    @classmethod
    def zeros(cls, n: int) -> "InitMap":
        return cls.constant(np.zeros(n))

    @classmethod
    def identity(cls) -> "InitMap":
        return cls("identity")

    @classmethod
    def affine(cls, C, c) -> "InitMap":
        C = np.atleast_2d(np.asarray(C, dtype=float))
        return cls("affine", C=C, c=np.atleast_1d(np.asarray(c, dtype=float)))

    @property
    def depends_on_x(self) -> bool:
        return self.kind != "constant"

    def _check(self, m: int, n: int):
        if self.kind == "constant":
            if self.y0 is None or self.y0.shape != (n,):
                raise ContractViolation(f"constant init must have shape ({n},)")
        elif self.kind == "identity":
            if n != m:
                raise ContractViolation(f"identity init needs n == m, got n={n}, m={m}")
        elif self.kind == "affine":
            if self.C.shape != (n, m) or self.c.shape != (n,):
                raise ContractViolation(f"affine init needs C of shape ({n}, {m}) and c of shape ({n},)")
        else:
            raise ContractViolation(f"unknown init kind {self.kind!r}")

    def __call__(self, x, n: Optional[int] = None) -> Vector:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        n = n if n is not None else (len(self.y0) if self.kind == "constant" else
                                     len(self.c) if self.kind == "affine" else len(x))
        self._check(len(x), n)
        if self.kind == "constant":
            y = self.y0.copy()
        elif self.kind == "identity":
            y = x.copy()
        else:
            y = self.C @ x + self.c
        if not np.all(np.isfinite(y)):
            raise DivergenceError(0, float("inf"))
        return y

    def jacobian(self, m: int, n: int) -> np.ndarray:
        """``Z_0 = dPsi_0/dx`` as a dense (n, m) panel."""
        self._check(m, n)
        if self.kind == "constant":
            return np.zeros((n, m))
        if self.kind == "identity":
            return np.eye(n)
        return self.C.copy()

    def vjp(self, lam: Vector, m: int) -> Vector:
        """``Z_0' lam``."""
        n = len(lam)
        self._check(m, n)
        if self.kind == "constant":
            return np.zeros(m)
        if self.kind == "identity":
            return lam.copy()
        return self.C.T @ lam


@dataclass(frozen=True)
class LLScheme:
    """Update rule and its step-size / aggregation schedules."""

    kind: str = GD
    eta: float = 0.5
    eta_schedule: str = "constant"
    rho0: float = 0.5
    rho_schedule: str = "harmonic"
    omega: Optional[Vector] = None
    decay: float = 0.5

    def __post_init__(self):
        if self.kind not in SCHEME_KINDS:
            raise ContractViolation(f"unknown scheme {self.kind!r}")
        if not self.eta > 0:
            raise ContractViolation("step size must be positive")
        if self.kind == LAYERWISE:
            if self.omega is None:
                raise ContractViolation("layerwise scheme needs omega")
            object.__setattr__(self, "omega", np.atleast_1d(np.asarray(self.omega, dtype=float)))
            if not np.all(np.isfinite(self.omega)):
                raise ContractViolation("omega must be finite")

    @property
    def aggregates(self) -> bool:
        return self.kind in (OPTIMISTIC_AGG, PESSIMISTIC_AGG)

    def eta_at(self, t: int) -> float:
        eta = schedule_value(self.eta_schedule, self.eta, t, self.decay)
        if not eta > 0:
            raise ContractViolation(f"step size at t={t} must be positive")
        return eta

    def rho_at(self, t: int) -> Optional[float]:
        if not self.aggregates:
            return None
        rho = schedule_value(self.rho_schedule, self.rho0, t, self.decay)
        if not 0 <= rho <= 1:
            raise ContractViolation(f"aggregation weight at t={t} must lie in [0, 1], got {rho}")
        return rho

    def weights(self, t: int) -> tuple[float, float]:
        """``(w_F, w_f)`` so that the direction is ``w_F*dF/dy + w_f*df/dy``."""
        rho = self.rho_at(t)
        if rho is None or rho == 0:
            return 0.0, 1.0
        sign = 1.0 if self.kind == OPTIMISTIC_AGG else -1.0
        return sign * rho, 1 - rho

    def with_kind(self, kind: str) -> "LLScheme":
        return LLScheme(kind, self.eta, self.eta_schedule, self.rho0, self.rho_schedule, self.omega, self.decay)


def direction(o: Oracles, scheme: LLScheme, x, y, t: int) -> Vector:
    gf = o.grad_f_y(x, y)
    if scheme.kind == LAYERWISE:
        return scheme.omega * gf
    w_F, w_f = scheme.weights(t)
    if w_F == 0:
        return gf
    return w_F * o.grad_F_y(x, y) + w_f * gf


def _guard(y: Vector, t: int) -> Vector:
    norm = float(np.linalg.norm(y))
    if not np.isfinite(norm) or norm > DIVERGENCE_LIMIT:
        raise DivergenceError(t, norm)
    return y


def step(p, scheme: LLScheme, x, y_prev, t: int) -> Vector:
    """One application of ``Psi_t``."""
    if t < 1:
        raise ContractViolation("step index starts at 1")
    o = as_oracles(p)
    return _guard(y_prev - scheme.eta_at(t) * direction(o, scheme, x, y_prev, t), t)


@dataclass(frozen=True)
class Trajectory:
    """Recorded LL iterates.  ``t0`` > 0 when only a trailing window was kept."""

    y_seq: tuple
    eta_seq: tuple
    rho_seq: Optional[tuple]
    x_at_solve: Vector
    t0: int = 0
    scheme: Optional[LLScheme] = field(default=None, compare=False)

    @property
    def T(self) -> int:
        return self.t0 + len(self.y_seq) - 1

    @property
    def y_final(self) -> Vector:
        return self.y_seq[-1]

    def y_at(self, t: int) -> Vector:
        if t < self.t0:
            raise ContractViolation(f"iterate {t} was not retained (window starts at {self.t0})")
        return self.y_seq[t - self.t0]

    def to_csv(self) -> str:
        buf = io.StringIO()
        n = len(self.y_seq[0])
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "eta", "rho"] + [f"y_{i}" for i in range(n)])
        for i, y in enumerate(self.y_seq):
            t = self.t0 + i
            eta = self.eta_seq[t - 1] if t >= 1 else ""
            rho = self.rho_seq[t - 1] if (t >= 1 and self.rho_seq is not None) else ""
            w.writerow([t, repr(eta) if eta != "" else "", repr(rho) if rho != "" else ""]
                       + [repr(float(v)) for v in y])
        return buf.getvalue()


def _frozen(y: Vector) -> Vector:
    y = np.array(y, dtype=float)
    y.setflags(write=False)
    return y


def init(init_map: InitMap, x, n: Optional[int] = None) -> Vector:
    return init_map(x, n)


def unroll(p, scheme: LLScheme, init_map: InitMap, x, T: int, keep_last: Optional[int] = None) -> Trajectory:
    """Run ``T`` steps from ``Psi_0(x)``.

    ``keep_last`` bounds the number of retained iterates (a ring buffer of
    ``keep_last`` entries); ``None`` keeps all ``T + 1``.
    """
    if T < 0:
        raise ContractViolation("T must be non-negative")
    o = as_oracles(p)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = init_map(x, o.n)
    buf = deque([_frozen(y)], maxlen=keep_last)
    etas, rhos = [], []
    for t in range(1, T + 1):
        etas.append(scheme.eta_at(t))
        rhos.append(scheme.rho_at(t))
        y = _guard(y - etas[-1] * direction(o, scheme, x, y, t), t)
        buf.append(_frozen(y))
    t0 = T + 1 - len(buf)
    return Trajectory(
        y_seq=tuple(buf), eta_seq=tuple(etas),
        rho_seq=tuple(rhos) if scheme.aggregates else None,
        x_at_solve=_frozen(x), t0=t0, scheme=scheme,
    )


class StepJacobian:
    """Operator view of ``A_t = dPsi_t/dy`` and ``B_t = dPsi_t/dx`` at ``(x, y_{t-1})``.

    With ``D`` the preconditioner (identity unless layerwise) and
    ``H = w_F*H_F + w_f*H_f``, ``C = w_F*C_F + w_f*C_f``:
    ``A = I - eta*D*H`` and ``B = -eta*D*C``.
    """

    def __init__(self, o: Oracles, scheme: LLScheme, x, y_prev, t: int):
        self.o, self.x, self.y = o, x, y_prev
        self.eta = scheme.eta_at(t)
        self.w_F, self.w_f = scheme.weights(t) if scheme.kind != LAYERWISE else (0.0, 1.0)
        self.omega = scheme.omega if scheme.kind == LAYERWISE else None

    def _D(self, v):
        return v if self.omega is None else self.omega * v

    def _H(self, v):
        out = self.w_f * self.o.hvp_yy_f(self.x, self.y, v)
        if self.w_F != 0:
            out = out + self.w_F * self.o.hvp_yy_F(self.x, self.y, v)
        return out

    def _Ct(self, v):
        out = self.w_f * self.o.chvp_xy_f(self.x, self.y, v)
        if self.w_F != 0:
            out = out + self.w_F * self.o.chvp_xy_F(self.x, self.y, v)
        return out

    def _C(self, u):
        out = self.w_f * self.o.jvp_xy_f(self.x, self.y, u)
        if self.w_F != 0:
            out = out + self.w_F * self.o.jvp_xy_F(self.x, self.y, u)
        return out

    def AT(self, lam: Vector) -> Vector:
        return lam - self.eta * self._H(self._D(lam))

    def BT(self, lam: Vector) -> Vector:
        return -self.eta * self._Ct(self._D(lam))

    def A_panel(self, Z: np.ndarray) -> np.ndarray:
        HZ = np.column_stack([self._H(Z[:, j]) for j in range(Z.shape[1])])
        return Z - self.eta * self._D_panel(HZ)

    def B_panel(self, m: int) -> np.ndarray:
        eye = np.eye(m)
        CB = np.column_stack([self._C(eye[:, j]) for j in range(m)])
        return -self.eta * self._D_panel(CB)

    def _D_panel(self, P):
        return P if self.omega is None else self.omega[:, None] * P


def ensure_1d(x: Sequence[float] | float) -> Vector:
    return np.atleast_1d(np.asarray(x, dtype=float))

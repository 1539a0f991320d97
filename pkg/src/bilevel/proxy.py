"""Proxy best response: an affine hyper-network ``y ~ W x + b`` fitted to the LL problem."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .dynamics import DIVERGENCE_LIMIT
from .errors import ContractViolation, DivergenceError
from .problem import as_oracles
from .report import HypergradReport

GLOBAL = "global"
LOCAL = "local"


@dataclass(frozen=True)
class HyperNet:
    W: np.ndarray
    b: np.ndarray

    @classmethod
    def zeros(cls, m: int, n: int) -> "HyperNet":
        return cls(np.zeros((n, m)), np.zeros(n))

    def __post_init__(self):
        W = np.atleast_2d(np.asarray(self.W, dtype=float))
        b = np.atleast_1d(np.asarray(self.b, dtype=float))
        if W.shape[0] != b.shape[0]:
            raise ContractViolation("W and b disagree on the LL dimension")
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
            raise ContractViolation("hyper-network parameters must be finite")
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "b", b)

    def __call__(self, x) -> np.ndarray:
        return self.W @ np.atleast_1d(x) + self.b

    def vjp(self, x, v) -> np.ndarray:
        return self.W.T @ v

    def to_record(self) -> dict:
        rec = {f"W_{i}_{j}": float(w) for (i, j), w in np.ndenumerate(self.W)}
        rec.update({f"b_{i}": float(v) for i, v in enumerate(self.b)})
        return rec

    @classmethod
    def from_record(cls, rec: dict, m: int, n: int) -> "HyperNet":
        W = np.array([[float(rec[f"W_{i}_{j}"]) for j in range(m)] for i in range(n)])
        b = np.array([float(rec[f"b_{i}"]) for i in range(n)])
        return cls(W, b)


@dataclass(frozen=True)
class ProxyTrainConfig:
    mode: str = LOCAL
    samples: int = 8
    steps: int = 100
    lr: float = 0.1
    delta: float = 0.1                  # local perturbation scale
    box: tuple = (-1.0, 1.0)            # global sampling box
    seed: int = 0

    def __post_init__(self):
        if self.mode not in (GLOBAL, LOCAL):
            raise ContractViolation(f"unknown proxy mode {self.mode!r}")
        if self.samples < 1:
            raise ContractViolation("need at least one sample")
        if self.mode == LOCAL and not self.delta > 0:
            raise ContractViolation("local perturbation scale must be positive")
        if self.steps < 0 or not self.lr > 0:
            raise ContractViolation("steps must be >= 0 and lr > 0")


def sample_points(cfg: ProxyTrainConfig, x_center, m: int) -> np.ndarray:
    rng = np.random.default_rng(cfg.seed)
    if cfg.mode == GLOBAL:
        lo, hi = cfg.box
        return rng.uniform(lo, hi, size=(cfg.samples, m))
    return np.atleast_1d(x_center)[None, :] + cfg.delta * rng.standard_normal((cfg.samples, m))


def proxy_objective(p, net: HyperNet, xs: np.ndarray) -> float:
    o = as_oracles(p)
    return float(np.mean([o.f(x, net(x)) for x in xs]))


def train_proxy(p, cfg: ProxyTrainConfig, x_center, net: HyperNet,
                history: Optional[list] = None) -> HyperNet:
    """Gradient descent on ``theta`` for the sample mean of ``f(x_s, W x_s + b)``.

    The sample set is drawn once per call from ``cfg.seed``.  If ``history``
    is given, the objective before each step (and after the last) is appended.
    """
    o = as_oracles(p)
    xs = sample_points(cfg, x_center, o.m)
    W, b = net.W.copy(), net.b.copy()
    for k in range(cfg.steps):
        grads = [o.grad_f_y(x, W @ x + b) for x in xs]
        if history is not None:
            history.append(float(np.mean([o.f(x, W @ x + b) for x in xs])))
        dW = sum(np.outer(g, x) for g, x in zip(grads, xs)) / len(xs)
        db = sum(grads) / len(xs)
        W = W - cfg.lr * dW
        b = b - cfg.lr * db
        norm = max(np.linalg.norm(W), np.linalg.norm(b))
        if not np.isfinite(norm) or norm > DIVERGENCE_LIMIT:
            raise DivergenceError(k + 1, float(norm))
    if history is not None and cfg.steps:
        history.append(float(np.mean([o.f(x, W @ x + b) for x in xs])))
    return HyperNet(W, b)


def proxy_hypergrad(p, net, x) -> HypergradReport:
    """``dF/dx + J' dF/dy`` at ``y = net(x)``; ``net`` needs ``__call__`` and ``vjp``."""
    o = as_oracles(p)
    start = o.counters.snapshot()
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.asarray(net(x), dtype=float)
    direct = o.grad_F_x(x, y)
    indirect = net.vjp(x, o.grad_F_y(x, y))
    return HypergradReport(direct, indirect, "proxy", counters=o.counters - start, peak_iterates=1, y=y)

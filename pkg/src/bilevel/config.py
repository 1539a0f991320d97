"""Flat ``key = value`` run configuration with dotted sections.

Example::

    problem.name = quad_lls
    problem.b = 1
    method.kind = rad
    method.T = 30
    method.K = 100
    run.x0 = 0
    run.repeat = 2

Values are kept as the raw strings that were read, so re-serializing a
parsed file reproduces it up to key order, comments and whitespace.
Typed values are produced on demand against the schema below.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .benchmarks import REGISTRY, BenchmarkProblem, make_problem
from .errors import ConfigError, ContractViolation
from .implicit import LinearSolveConfig
from .outer import METHODS, SolverConfig
from .proxy import ProxyTrainConfig
from .valuefn import BarrierParams


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("true", "1", "yes"):
        return True
    if v in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _opt(conv):
    def parse(s):
        return None if s.strip().lower() == "none" else conv(s)
    return parse


def _floats(s: str) -> tuple:
    return tuple(float(v) for v in s.split(",") if v.strip())


def _matrix(s: str) -> np.ndarray:
    rows = [_floats(r) for r in s.split(";") if r.strip()]
    if len({len(r) for r in rows}) != 1:
        raise ValueError("ragged matrix")
    return np.array(rows)


def _pair(s: str) -> tuple:
    v = _floats(s)
    if len(v) != 2:
        raise ValueError("expected two comma-separated numbers")
    return v


# method.* keys map straight onto SolverConfig fields
METHOD_KEYS = {
    "kind": str, "K": int, "T": int, "gamma": float, "gamma_schedule": str, "eta": _opt(float),
    "eta_schedule": str, "rho0": float, "rho_schedule": str, "formulation": _opt(str), "tol": float,
    "M": _opt(int), "one_stage_mode": str, "one_stage_eps": _opt(float), "alpha": _opt(float),
    "omega": _opt(_floats), "learn_omega": _bool, "omega_lr": _opt(float), "Q1": int, "Q2": int,
    "n_stages": int, "k_inner": int, "warm_start": _bool, "init": str, "record_time": _bool,
}
LINEAR_KEYS = {"method": str, "max_iters": int, "tol": float, "accept_partial": _bool,
               "stationarity_rtol": float, "power_iters": int}
BARRIER_KEYS = {"mu1": float, "mu2": float, "theta": float, "tau": float, "decay": float}
PROXY_KEYS = {"mode": str, "samples": int, "steps": int, "lr": float, "delta": float, "box": _pair,
              "seed": int}
RUN_KEYS = {"x0": _floats, "repeat": int, "seed": int, "out_dir": str}
PROBLEM_KEYS = {
    "quad_lls": {"m": int, "A": _matrix, "b": _floats},
    "non_lls_1": {},
    "pess_1": {},
    "hyperclean": {"seed": int, "n_tr": int, "n_val": int, "n_feat": int, "corrupt_frac": float},
    "bilinear_minimax": {"a": float},
}


def schema_for(problem_name: Optional[str]) -> dict:
    keys = {"problem.name": str}
    keys.update({f"method.{k}": v for k, v in METHOD_KEYS.items()})
    keys.update({f"method.linear_solve.{k}": v for k, v in LINEAR_KEYS.items()})
    keys.update({f"method.barrier.{k}": v for k, v in BARRIER_KEYS.items()})
    keys.update({f"method.proxy.{k}": v for k, v in PROXY_KEYS.items()})
    keys.update({f"run.{k}": v for k, v in RUN_KEYS.items()})
    if problem_name in PROBLEM_KEYS:
        keys.update({f"problem.{k}": v for k, v in PROBLEM_KEYS[problem_name].items()})
    return keys


def parse_text(text: str) -> dict:
    """Raw ``{key: value-string}``; rejects malformed lines and duplicates."""
    entries = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in entries:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        entries[key] = value
    return entries


def serialize(entries: dict) -> str:
    return "".join(f"{k} = {entries[k]}\n" for k in sorted(entries))


@dataclass
class RunConfig:
    entries: dict = field(default_factory=dict)

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        cfg = cls(parse_text(text))
        cfg.typed()  # validate eagerly
        return cfg

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from None
        return cls.from_text(text)

    def to_text(self) -> str:
        return serialize(self.entries)

    @property
    def problem_name(self) -> str:
        name = self.entries.get("problem.name")
        if name is None:
            raise ConfigError("missing key 'problem.name'")
        if name not in REGISTRY:
            raise ConfigError(f"unknown problem {name!r}; known: {', '.join(REGISTRY)}")
        return name

    def typed(self) -> dict:
        schema = schema_for(self.problem_name)
        out = {}
        for key, raw in self.entries.items():
            if key not in schema:
                raise ConfigError(f"unknown key {key!r}")
            try:
                out[key] = schema[key](raw)
            except (TypeError, ValueError) as e:
                raise ConfigError(f"bad value for {key!r}: {raw!r} ({e})") from None
        kind = out.get("method.kind", "rad")
        if kind not in METHODS:
            raise ConfigError(f"unknown method {kind!r}; known: {', '.join(METHODS)}")
        return out

    def with_entry(self, key: str, value: str) -> "RunConfig":
        e = dict(self.entries)
        e[key] = value
        return RunConfig(e)

    def _section(self, typed: dict, prefix: str) -> dict:
        return {k[len(prefix):]: v for k, v in typed.items()
                if k.startswith(prefix) and "." not in k[len(prefix):]}

    def problem(self) -> BenchmarkProblem:
        typed = self.typed()
        params = self._section(typed, "problem.")
        params.pop("name")
        try:
            return make_problem(self.problem_name, **params)
        except ContractViolation as e:
            raise ConfigError(f"problem parameters rejected: {e}") from None

    def solver(self) -> SolverConfig:
        typed = self.typed()
        kw = self._section(typed, "method.")
        kw["method"] = kw.pop("kind", "rad")
        kw["seed"] = typed.get("run.seed", 0)
        try:
            kw["linear_solve"] = LinearSolveConfig(**self._section(typed, "method.linear_solve."))
            kw["barrier"] = BarrierParams(**self._section(typed, "method.barrier."))
            kw["proxy"] = ProxyTrainConfig(**self._section(typed, "method.proxy."))
        except ContractViolation as e:
            raise ConfigError(str(e)) from None
        return SolverConfig(**kw)

    def x0(self, m: int) -> np.ndarray:
        raw = self.typed().get("run.x0")
        if raw is None:
            return np.zeros(m)
        x0 = np.array(raw, dtype=float)
        if len(x0) == 1 and m > 1:
            x0 = np.full(m, x0[0])
        if x0.shape != (m,):
            raise ConfigError(f"run.x0 needs {m} entries, got {len(x0)}")
        return x0

    @property
    def repeat(self) -> int:
        r = self.typed().get("run.repeat", 1)
        if r < 1:
            raise ConfigError("run.repeat must be >= 1")
        return r

    @property
    def out_dir(self) -> str:
        return self.typed().get("run.out_dir", "blo_out")

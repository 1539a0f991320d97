"""Command-line runner.

    python -m bilevel solve run.cfg
    python -m bilevel compare run.cfg --methods rad,bda:optimistic
    python -m bilevel check
    python -m bilevel profile --T 10,20,40

Exit codes: 0 ok, 1 check failure, 2 numerical abort, 3 configuration or
usage error.  ``BLO_OUT_DIR`` overrides the output directory.
"""

from __future__ import annotations

import argparse
import csv
import io
import os
import re
import sys
import tempfile
import time

import numpy as np

from .benchmarks import make_problem
from .config import RunConfig
from .errors import ConfigError, ContractViolation, NumericalError
from .outer import SolverConfig, solve
from .verify import PROFILE_METHODS, complexity_profile, run_checks

EXIT_OK, EXIT_CHECK, EXIT_NUMERICAL, EXIT_CONFIG = 0, 1, 2, 3
OUT_ENV = "BLO_OUT_DIR"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def write_atomic(path: str, text: str):
    """Write via a temporary file in the same directory, then rename."""
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=".csv")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _out_dir(default: str) -> str:
    return os.environ.get(OUT_ENV) or default


def _records_csv(records: list) -> str:
    cols = []
    for r in records:
        cols += [k for k in r if k not in cols]
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n", restval="")
    w.writeheader()
    for r in records:
        w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    return buf.getvalue()


def _summary(name, x, trace, status, wall_ms):
    last = trace.rows[-1] if trace.rows else {}
    rec = {"run": name, "status": status, "iterations": len(trace.rows),
           "final_F": last.get("F", float("nan")), "final_grad_norm": last.get("grad_norm", float("nan")),
           "converged": int(trace.converged), "wall_ms": wall_ms}
    rec.update({f"x_{i}": float(v) for i, v in enumerate(np.atleast_1d(x))})
    return rec


def _run(problem, solver: SolverConfig, x0):
    """``(x, trace, status)``; numerical aborts return the partial trace."""
    try:
        x, _, trace = solve(problem, solver, x0)
        return x, trace, "ok"
    except NumericalError as e:
        trace = e.trace
        x = trace.xs()[-1] if trace is not None and trace.rows else x0
        print(f"numerical abort: {e}", file=sys.stderr)
        return x, trace, "numerical_abort"


def cmd_solve(config_path: str) -> int:
    cfg = RunConfig.from_file(config_path)
    problem, solver = cfg.problem(), cfg.solver()
    x0 = cfg.x0(problem.m)
    out = _out_dir(cfg.out_dir)
    summaries, code = [], EXIT_OK
    for r in range(1, cfg.repeat + 1):
        t0 = time.perf_counter()
        x, trace, status = _run(problem, solver, x0)
        wall = (time.perf_counter() - t0) * 1e3 if solver.record_time else 0.0
        name = "trace.csv" if cfg.repeat == 1 else f"trace_{r}.csv"
        if trace is not None:
            write_atomic(os.path.join(out, name), trace.to_csv())
        summaries.append(_summary(name, x, trace, status, wall))
        if status != "ok":
            code = EXIT_NUMERICAL
            break
    write_atomic(os.path.join(out, "summary.csv"), _records_csv(summaries))
    s = summaries[-1]
    print(f"{solver.method} on {problem.name}: x = {[s[k] for k in s if k.startswith('x_')]}, "
          f"iterations = {s['iterations']}, status = {s['status']}")
    return code


_METHOD_TOKEN = re.compile(r"^\s*([a-z_]+)\s*(?:[:(]\s*([a-z]+)\s*\)?)?\s*$")


def parse_methods(spec: str) -> list:
    """``"rad,bda:optimistic"`` or ``"rad,bda(optimistic)"`` -> [(label, method, formulation)]."""
    out = []
    for tok in [t for t in spec.split(",") if t.strip()]:
        mt = _METHOD_TOKEN.match(tok)
        if not mt:
            raise UsageError(f"cannot parse method {tok!r}")
        out.append((tok.strip(), mt.group(1), mt.group(2)))
    if len(out) < 2:
        raise UsageError("compare needs at least two methods")
    return out


def cmd_compare(config_path: str, methods: list) -> int:
    cfg = RunConfig.from_file(config_path)
    problem = cfg.problem()
    x0 = cfg.x0(problem.m)
    solvers = []
    for label, method, form in methods:
        c = cfg.with_entry("method.kind", method)
        if form is not None:
            c = c.with_entry("method.formulation", form)
        solvers.append((label, c.solver()))   # validate every entry before running any
    out = _out_dir(cfg.out_dir)
    wide, long_rows, code = [], [], EXIT_OK
    for label, solver in solvers:
        x, trace, status = _run(problem, solver, x0)
        wide.append(_summary(label, x, trace, status, 0.0))
        if trace is not None:
            for row in trace.rows:
                long_rows.append({"method": label, **row})
        if status != "ok":
            code = EXIT_NUMERICAL
    write_atomic(os.path.join(out, "compare_wide.csv"), _records_csv(wide))
    write_atomic(os.path.join(out, "compare_long.csv"), _records_csv(long_rows))
    for s in wide:
        print(f"{s['run']:>24}: x = {[round(s[k], 6) for k in s if k.startswith('x_')]}  status = {s['status']}")
    return code


def cmd_check(seed: int = 0) -> int:
    rep = run_checks(seed)
    print(rep.to_text(), end="")
    out = os.environ.get(OUT_ENV)
    if out:
        write_atomic(os.path.join(out, "check.csv"), rep.to_csv())
    if not rep.passed:
        print("failed checks: " + ", ".join(rep.failures()))
        return EXIT_CHECK
    return EXIT_OK


def _int_list(s: str) -> list:
    try:
        vals = [int(v) for v in s.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated integers, got {s!r}") from None
    if not vals or min(vals) < 1:
        raise UsageError("horizons must be positive integers")
    return vals


def cmd_profile(T_list: list, problem_name: str = "quad_lls", m: int = 4, methods=PROFILE_METHODS) -> int:
    params = {"m": m} if problem_name == "quad_lls" else {}
    problem = make_problem(problem_name, **params)
    rep = complexity_profile(problem, methods, T_list)
    out = _out_dir("blo_out")
    write_atomic(os.path.join(out, "profile.csv"), rep.rows_csv())
    print(rep.to_text(), end="")
    return EXIT_OK if rep.passed else EXIT_CHECK


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="bilevel", description="bi-level hypergradient toolkit")
    sub = ap.add_subparsers(dest="cmd", parser_class=_Parser)
    s = sub.add_parser("solve", help="run one solve from a config file")
    s.add_argument("config")
    c = sub.add_parser("compare", help="run several methods on the same problem")
    c.add_argument("config")
    c.add_argument("--methods", required=True)
    k = sub.add_parser("check", help="run the invariant suite")
    k.add_argument("--seed", type=int, default=0)
    p = sub.add_parser("profile", help="storage and work profile")
    p.add_argument("--T", default="10,20,40")
    p.add_argument("--problem", default="quad_lls")
    p.add_argument("--m", type=int, default=4)
    return ap


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.cmd == "solve":
            return cmd_solve(args.config)
        if args.cmd == "compare":
            return cmd_compare(args.config, parse_methods(args.methods))
        if args.cmd == "check":
            return cmd_check(args.seed)
        if args.cmd == "profile":
            return cmd_profile(_int_list(args.T), args.problem, args.m)
        raise UsageError("missing subcommand (solve, compare, check, profile)")
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConfigError, ContractViolation) as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

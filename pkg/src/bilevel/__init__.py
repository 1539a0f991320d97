"""Hypergradient toolkit for bi-level optimization problems.

An upper-level objective ``F(x, y)`` is minimized over ``x`` while ``y``
solves (or approximately solves) the lower-level problem ``min_y f(x, y)``.
The package provides the unrolled-dynamics hypergradients (forward, reverse,
truncated reverse, one-stage), initialization-based and proxy variants, the
implicit-function hypergradient, a Hessian-free value-function barrier
method, an outer gradient loop, analytic benchmarks and independent
verification oracles.
"""

from .benchmarks import (BenchmarkProblem, make_bilinear_minimax, make_hyperclean, make_non_lls_1,
                         make_pess_1, make_problem, make_quad_lls)
from .dynamics import InitMap, LLScheme, Trajectory, step, unroll
from .errors import (BarrierInfeasibleError, BilevelError, CapabilityError, ConfigError, ContractionError,
                     ContractViolation, DivergenceError, NonConvergenceError, NumericalDomainError,
                     NumericalError)
from .implicit import LinearSolveConfig, ift_hypergrad, neumann_inverse_hvp
from .initbased import InitBasedConfig, first_order_hypergrad, layerwise_hypergrad, reptile_direction
from .outer import SolverConfig, SolveTrace, solve
from .problem import BilevelProblem, Counters, Oracles, eval_objectives, finite_diff_second_order
from .proxy import HyperNet, ProxyTrainConfig, proxy_hypergrad, train_proxy
from .recurrent import fad_hypergrad, one_stage_hypergrad, rad_hypergrad, trad_hypergrad
from .report import HypergradReport
from .schedules import schedule_value
from .valuefn import BarrierParams, barrier_objective, bvfim_hypergrad, ll_value
from .verify import (DiagnosticReport, complexity_profile, fd_hypergrad_oracle, grid_oracle_optimum,
                     theorem1_diagnostics)

__version__ = "0.1.0"

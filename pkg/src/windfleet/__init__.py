"""Charge/discharge scheduling for aggregated EV fleets in a wind-primary
microgrid: day-ahead optimization, hourly re-planning, degradation-aware
costing, Markov wind forecasting, and a benchmark harness against
uncontrolled charging."""

from .baseline import bau_schedule
from .bnb import Solution, complementarity_heuristic, solve
from .builder import (
    MiqpProblem,
    ModelStats,
    WindowEntry,
    build_dynamic,
    build_static,
    dump_problem,
    extract_schedule,
    presolve,
)
from .degradation import DegradationParams, linear_cost, quadratic_cost
from .domain import (
    EvSession,
    EvSpec,
    Mode,
    Scenario,
    Schedule,
    TimeGrid,
    Violation,
    assemble_schedule,
    max_energy_per_period,
    soc_trajectory,
    t_min,
    validate_schedule,
)
from .forecast import MarkovForecaster, PerfectForecaster, fit, hourly_levels
from .metrics import Report, compare, report
from .qp import QpError, QpResult, QpWarmStart, SolverConfig, solve_qp
from .rolling import (
    FutureDemandModel,
    PlannerState,
    RollingResult,
    estimate_future_demand,
    run,
    step,
)
from .simgen import ScenarioConfig, ev_catalog, fit_future_demand_model, generate

__version__ = "0.1.0"

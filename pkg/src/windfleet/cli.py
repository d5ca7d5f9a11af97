"""Batch command-line front end.

Exit codes: 0 success, 1 invalid configuration, 2 solver failure (the
message names the planning step where it happened), 3 missing or unreadable
files.  Set ``V2G_LOG={error|info|debug}`` for log verbosity.  All outputs
are deterministic given the flags and seed, except the solve timings in
``diagnostics.jsonl``.
"""

from __future__ import annotations

import dataclasses
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import click
import numpy as np

from . import bnb, fileio, metrics, rolling, simgen
from .baseline import bau_schedule
from .builder import build_static, extract_schedule, presolve
from .domain import DomainError, Scenario, validate_schedule
from .forecast import MarkovForecaster, PerfectForecaster, fit, hourly_levels
from .qp import QpError, SolverConfig

logger = logging.getLogger("windfleet")

_EXIT_CONFIG = 1
_EXIT_SOLVER = 2
_EXIT_IO = 3


def _fail(code: int, message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _setup_logging() -> None:
    level = os.environ.get("V2G_LOG", "error").lower()
    mapping = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=mapping.get(level, logging.ERROR),
                        format="%(levelname)s %(name)s: %(message)s")


@click.group()
def main() -> None:
    """Charge/discharge scheduling for EV fleets in a wind-primary microgrid."""
    _setup_logging()


@main.command()
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--vehicles", type=int, default=10, show_default=True,
              help="EV trips per simulated day.")
@click.option("--days", type=int, default=1, show_default=True)
@click.option("--r-v2g", type=float, default=0.5, show_default=True,
              help="Fraction of sessions participating in V2G.")
@click.option("--home-fraction", type=float, default=0.5, show_default=True)
@click.option("--lam", "--lambda", "lam", type=float, default=1.0, show_default=True,
              help="Degradation tolerance weight in [0, 1].")
@click.option("--delta", type=float, default=0.25, show_default=True,
              help="Curtailment penalty as a multiple of the energy price.")
@click.option("--p-g-max", type=float, default=None,
              help="Transformer cap per period (kWh); unlimited when omitted.")
@click.option("--wind-peak-kw", type=float, default=230.0, show_default=True,
              help="Turbine envelope of the bundled synthetic wind trace.")
@click.option("--wind", "wind_csv", type=click.Path(), default=None,
              help="Existing wind CSV to copy into the scenario instead of synthesizing.")
@click.option("--price", "price_csv", type=click.Path(), default=None,
              help="Existing price CSV to copy in.")
@click.option("--expand-hourly", is_flag=True,
              help="Treat imported traces as hourly rows to be expanded to 15 min.")
@click.option("--out", type=click.Path(), required=True, help="Output directory.")
def generate(seed, vehicles, days, r_v2g, home_fraction, lam, delta, p_g_max,
             wind_peak_kw, wind_csv, price_csv, expand_hourly, out) -> None:
    """Generate a seeded scenario (sessions plus wind/price traces)."""
    try:
        config = simgen.ScenarioConfig(n_vehicles=vehicles, days=days, seed=seed,
                                       home_fraction=home_fraction, r_v2g=r_v2g)
        scenario = simgen.synthetic_scenario(
            config, lam=lam, delta=delta,
            p_g_max_kwh=float("inf") if p_g_max is None else p_g_max,
            wind_peak_kw=wind_peak_kw)
        if wind_csv is not None or price_csv is not None:
            h = scenario.grid.horizon_periods
            wind = scenario.wind_kwh
            price = scenario.price_cents_per_kwh
            if wind_csv is not None:
                wind = fileio.read_trace_csv(Path(wind_csv), "kwh", expand_hourly)[:h]
            if price_csv is not None:
                price = fileio.read_trace_csv(Path(price_csv), "cents_per_kwh",
                                              expand_hourly)[:h]
            scenario = dataclasses.replace(scenario, wind_kwh=wind,
                                           price_cents_per_kwh=price)
    except FileNotFoundError as exc:
        _fail(_EXIT_IO, str(exc))
    except (fileio.ConfigError, DomainError, ValueError) as exc:
        _fail(_EXIT_CONFIG, str(exc))
    out_dir = Path(out)
    fileio.save_scenario(scenario, out_dir / "scenario.json")
    click.echo(f"wrote {out_dir / 'scenario.json'} ({scenario.n_sessions} sessions)")


def _solver_config(gap: float, node_limit: int) -> SolverConfig:
    return SolverConfig(relative_gap_tolerance=gap, node_limit=node_limit)


def _run_one(config_path: Path, mode: str, forecast: str, forecaster_path,
             future_demand: str, seed, out_dir: Path, gap: float,
             node_limit: int) -> None:
    scenario = fileio.load_scenario(config_path)
    if seed is not None:
        scenario = dataclasses.replace(scenario, seed=seed)
    solver_config = _solver_config(gap, node_limit)
    out_dir.mkdir(parents=True, exist_ok=True)
    waivers: frozenset[str] = frozenset()
    steps = ()

    if mode == "bau":
        schedule = bau_schedule(scenario)
    elif mode == "static":
        problem = build_static(scenario)
        reduced, _ = presolve(problem)
        solution = bnb.solve(reduced, solver_config)
        if solution.x is None:
            raise RuntimeError(f"static solve returned {solution.status}")
        schedule = extract_schedule(reduced, solution.x, scenario)
        logger.info("static solve: %s obj=%.4f gap=%.2e nodes=%d",
                    solution.status, solution.objective, solution.gap, solution.nodes)
    else:
        if forecast == "markov":
            if forecaster_path is None:
                raise fileio.ConfigError("--forecast markov requires --forecaster")
            path = Path(forecaster_path)
            if not path.exists():
                raise FileNotFoundError(f"forecaster file not found: {path}")
            forecaster = MarkovForecaster.from_json(path.read_text())
        else:
            forecaster = PerfectForecaster()
        fd_model = None
        if future_demand == "fitted":
            fd_model = simgen.fit_future_demand_model(scenario.sessions, scenario.grid)
        result = rolling.run(scenario, forecaster, solver_config, fd_model)
        schedule = result.schedule
        waivers = result.waived_desired
        steps = result.steps

    violations = validate_schedule(scenario, schedule, waived_desired=waivers)
    if violations:
        first = violations[0]
        raise RuntimeError(
            f"schedule failed validation ({len(violations)} violations; first: "
            f"{first.kind} session={first.session_id} period={first.period})")
    rep = metrics.report(scenario, schedule, label=mode)
    fileio.write_schedule_csv(out_dir / "schedule.csv", scenario, schedule)
    (out_dir / "report.json").write_text(rep.to_json() + "\n")
    fileio.write_diagnostics_jsonl(out_dir / "diagnostics.jsonl", steps)
    click.echo(f"{config_path.name} [{mode}] -> {out_dir} "
               f"(total cost {rep.total_cost_cents:.2f} c)")


def _run_one_guarded(args) -> None:
    _run_one(*args)


def _simulate_impl(configs, mode, forecast, forecaster, future_demand, seed,
                   out, gap, node_limit, jobs) -> None:
    out_dir = Path(out)
    try:
        if len(configs) == 1:
            _run_one(Path(configs[0]), mode, forecast, forecaster, future_demand,
                     seed, out_dir, gap, node_limit)
        else:
            tasks = [(Path(cfg), mode, forecast, forecaster, future_demand, seed,
                      out_dir / Path(cfg).stem, gap, node_limit) for cfg in configs]
            if jobs > 1:
                with ProcessPoolExecutor(max_workers=jobs) as pool:
                    list(pool.map(_run_one_guarded, tasks))
            else:
                for task in tasks:
                    _run_one_guarded(task)
    except FileNotFoundError as exc:
        _fail(_EXIT_IO, str(exc))
    except (fileio.ConfigError, DomainError) as exc:
        _fail(_EXIT_CONFIG, str(exc))
    except (rolling.RollingStepError, QpError, RuntimeError) as exc:
        _fail(_EXIT_SOLVER, str(exc))


@main.command()
@click.option("--config", "configs", type=click.Path(), multiple=True, required=True,
              help="Scenario JSON (repeat for batch runs).")
@click.option("--mode", type=click.Choice(["bau", "static", "dynamic"]), required=True)
@click.option("--forecast", type=click.Choice(["perfect", "markov"]), default="perfect",
              show_default=True)
@click.option("--forecaster", type=click.Path(), default=None,
              help="Forecaster JSON from train-forecast (markov mode).")
@click.option("--future-demand", type=click.Choice(["none", "fitted"]), default="none",
              show_default=True, help="Expected-demand model for unseen arrivals.")
@click.option("--seed", type=int, default=None, help="Seed echoed into the outputs.")
@click.option("--out", type=click.Path(), required=True)
@click.option("--gap", type=float, default=1e-5, show_default=True,
              help="Relative optimality gap per solve.")
@click.option("--node-limit", type=int, default=400, show_default=True)
@click.option("--jobs", type=int, default=1, show_default=True,
              help="Parallel workers across independent scenario runs.")
def simulate(configs, mode, forecast, forecaster, future_demand, seed, out, gap,
             node_limit, jobs) -> None:
    """Run one scheduling mode and write schedule.csv, report.json, diagnostics."""
    _simulate_impl(configs, mode, forecast, forecaster, future_demand, seed, out,
                   gap, node_limit, jobs)


@main.command("solve-static")
@click.option("--config", type=click.Path(), required=True)
@click.option("--out", type=click.Path(), required=True)
@click.option("--gap", type=float, default=1e-5, show_default=True)
@click.option("--node-limit", type=int, default=400, show_default=True)
def solve_static(config, out, gap, node_limit) -> None:
    """Day-ahead solve with everything known in advance."""
    _simulate_impl((config,), "static", "perfect", None, "none", None, out,
                   gap, node_limit, 1)


@main.command("solve-dynamic")
@click.option("--config", type=click.Path(), required=True)
@click.option("--forecast", type=click.Choice(["perfect", "markov"]), default="perfect",
              show_default=True)
@click.option("--forecaster", type=click.Path(), default=None)
@click.option("--future-demand", type=click.Choice(["none", "fitted"]), default="none",
              show_default=True)
@click.option("--out", type=click.Path(), required=True)
@click.option("--gap", type=float, default=1e-5, show_default=True)
@click.option("--node-limit", type=int, default=400, show_default=True)
def solve_dynamic(config, forecast, forecaster, future_demand, out, gap,
                  node_limit) -> None:
    """Hourly re-planning run over the scenario horizon."""
    _simulate_impl((config,), "dynamic", forecast, forecaster, future_demand,
                   None, out, gap, node_limit, 1)


@main.command("train-forecast")
@click.option("--wind", "wind_csv", type=click.Path(), required=True,
              help="Wind CSV at 15-minute resolution (header 'period,kwh').")
@click.option("--train-days", type=int, default=15, show_default=True,
              help="Leading days of the trace used for fitting.")
@click.option("--states", type=int, default=20, show_default=True)
@click.option("--expand-hourly", is_flag=True)
@click.option("--out", type=click.Path(), required=True,
              help="Forecaster JSON output path.")
def train_forecast(wind_csv, train_days, states, expand_hourly, out) -> None:
    """Fit the Markov wind forecaster on the leading days of a trace."""
    from .domain import TimeGrid

    try:
        trace = fileio.read_trace_csv(Path(wind_csv), "kwh", expand_hourly)
    except FileNotFoundError as exc:
        _fail(_EXIT_IO, str(exc))
    except fileio.ConfigError as exc:
        _fail(_EXIT_CONFIG, str(exc))
    grid = TimeGrid(horizon_periods=max(len(trace), 1))
    levels = hourly_levels(trace, grid)
    levels = levels[: train_days * 24]
    try:
        forecaster = fit(levels, n_states=states)
    except DomainError as exc:
        _fail(_EXIT_CONFIG, str(exc))
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    Path(out).write_text(forecaster.to_json() + "\n")
    click.echo(f"wrote {out} ({len(levels)} training steps, {states} states)")


@main.command("compare")
@click.argument("reports", nargs=-1, required=True, type=click.Path())
@click.option("--out", type=click.Path(), default=None,
              help="CSV output path (stdout when omitted).")
def compare_cmd(reports, out) -> None:
    """Tabulate metrics across runs of the same scenario."""
    if len(reports) < 2:
        _fail(_EXIT_CONFIG, "compare needs at least two report files")
    loaded = []
    for path in reports:
        p = Path(path)
        if not p.exists():
            _fail(_EXIT_IO, f"report file not found: {p}")
        loaded.append(metrics.Report.from_json(p.read_text()))
    try:
        table = metrics.compare(loaded)
    except DomainError as exc:
        _fail(_EXIT_CONFIG, str(exc))
    text = table.to_csv()
    if out is None:
        click.echo(text, nl=False)
    else:
        Path(out).write_text(text)
        click.echo(f"wrote {out}")


if __name__ == "__main__":
    main()

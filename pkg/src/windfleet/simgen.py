"""Seeded stochastic scenario generation and the stock EV catalog.

Everything here is deterministic given the configuration and seed: vehicle
models drawn uniformly from a ten-entry 2018 market catalog, arrival hours
from editable home/work distributions (half the fleet charges at work, half
at home by default), plug durations uniform on 4..12 h in 15-minute steps,
initial SOC uniform on [0, 0.65] of capacity, desired SOC uniform on
[0.75, 0.95] of capacity, and a 5 kWh minimum reserve.

Wind and price traces are imported from CSV in production use; a bundled
diurnal-plus-noise generator (scaled from a 230 kW turbine profile) makes
scenarios reproducible without external data.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .domain import DomainError, EvSession, EvSpec, Mode, Scenario, TimeGrid
from .rolling import FutureDemandModel

#: 2018 market catalog: acceptance rate (kW), capacity (kWh), charger (kW), pack cost ($)
_CATALOG_ROWS: tuple[tuple[str, float, float, float, float], ...] = (
    ("BMW i3 2017", 7.4, 32.0, 7.7, 4640.0),
    ("Ford Focus EV", 6.6, 23.0, 7.7, 3500.0),
    ("Ford Focus EV 2017", 6.6, 33.5, 7.7, 4850.0),
    ("Nissan Leaf S 2016", 6.6, 24.0, 7.7, 3500.0),
    ("Nissan Leaf 2017", 6.6, 30.0, 7.7, 4350.0),
    ("VW e-Golf 2017", 7.2, 35.8, 7.7, 5200.0),
    ("Chevy Bolt", 7.2, 60.0, 7.7, 8700.0),
    ("Tesla Model S 70 Single", 9.6, 70.0, 11.5, 10150.0),
    ("Tesla Model X 75 Dual", 17.2, 75.0, 15.4, 10900.0),
    ("Tesla Model S 90 Dual", 19.2, 90.0, 15.4, 13000.0),
)


def ev_catalog(eta: float = 0.9) -> dict[str, EvSpec]:
    """The ten stock vehicle models, in catalog order."""
    return {
        name: EvSpec(acceptance_rate_kw=ar, battery_capacity_kwh=cap,
                     charger_power_kw=cp, battery_cost_usd=cost,
                     eta_c=eta, eta_d=eta)
        for name, ar, cap, cp, cost in _CATALOG_ROWS
    }


def _default_pmfs() -> tuple[tuple[float, ...], tuple[float, ...]]:
    with resources.files("windfleet.data").joinpath("arrival_pmfs.json").open() as fp:
        data = json.load(fp)
    home = np.array(data["home"], dtype=float)
    work = np.array(data["work"], dtype=float)
    return tuple(home / home.sum()), tuple(work / work.sum())


@dataclass(frozen=True)
class ScenarioConfig:
    """Knobs of the stochastic fleet generator."""

    n_vehicles: int = 100
    days: int = 10
    seed: int = 0
    home_fraction: float = 0.5
    r_v2g: float = 0.5
    arrival_pmf_home: tuple[float, ...] = ()
    arrival_pmf_work: tuple[float, ...] = ()
    plug_min_periods: int = 16      # 4 h at 15-minute resolution
    plug_max_periods: int = 48      # 12 h
    soc_init_frac: tuple[float, float] = (0.0, 0.65)
    soc_desired_frac: tuple[float, float] = (0.75, 0.95)
    soc_min_kwh: float = 5.0
    eta: float = 0.9

    def __post_init__(self) -> None:
        if self.n_vehicles <= 0 or self.days <= 0:
            raise DomainError("n_vehicles and days must be positive")
        if not 0.0 <= self.r_v2g <= 1.0 or not 0.0 <= self.home_fraction <= 1.0:
            raise DomainError("fractions must lie in [0, 1]")
        home, work = self.arrival_pmf_home, self.arrival_pmf_work
        if not home or not work:
            d_home, d_work = _default_pmfs()
            object.__setattr__(self, "arrival_pmf_home", home or d_home)
            object.__setattr__(self, "arrival_pmf_work", work or d_work)
        for name in ("arrival_pmf_home", "arrival_pmf_work"):
            pmf = np.array(getattr(self, name), dtype=float)
            if pmf.shape != (24,) or np.any(pmf < 0) or abs(pmf.sum() - 1.0) > 1e-9:
                raise DomainError(f"{name} must be a 24-bin probability vector")


def generate(config: ScenarioConfig) -> tuple[EvSession, ...]:
    """Draw one fleet of plug-in sessions (``n_vehicles`` per simulated day).

    Sessions are sorted by arrival and fully determined by the seed; wind and
    price traces are attached separately.
    """
    rng = np.random.default_rng(config.seed)
    catalog = list(ev_catalog(config.eta).values())
    sessions: list[EvSession] = []
    for day in range(config.days):
        for k in range(config.n_vehicles):
            spec = catalog[int(rng.integers(0, len(catalog)))]
            at_home = rng.random() < config.home_fraction
            pmf = config.arrival_pmf_home if at_home else config.arrival_pmf_work
            hour = int(rng.choice(24, p=np.array(pmf)))
            quarter = int(rng.integers(0, 4))
            t_arr = day * 96 + hour * 4 + quarter
            duration = int(rng.integers(config.plug_min_periods,
                                        config.plug_max_periods + 1))
            cap = spec.battery_capacity_kwh
            init = float(rng.uniform(*config.soc_init_frac) * cap)
            desired = float(rng.uniform(*config.soc_desired_frac) * cap)
            mode = Mode.V2G if rng.random() < config.r_v2g else Mode.G2V
            sessions.append(EvSession(
                id=f"d{day:02d}-ev{k:03d}",
                spec=spec,
                t_arr=t_arr,
                t_dep=t_arr + duration,
                soc_init_kwh=init,
                soc_desired_kwh=desired,
                soc_min_kwh=min(config.soc_min_kwh, cap),
                mode=mode,
            ))
    sessions.sort(key=lambda s: (s.t_arr, s.id))
    return tuple(sessions)


def synth_wind_trace(n_periods: int, seed: int, peak_kw: float = 230.0) -> np.ndarray:
    """Diurnal-plus-noise wind energy trace (kWh per 15-minute period).

    An hourly AR(1) level rides on a night-peaked diurnal shape, clipped to
    the turbine envelope and held constant within each hour (matching the
    hourly resolution of typical turbine production data).
    """
    rng = np.random.default_rng(seed)
    n_hours = -(-n_periods // 4)
    hours = np.arange(n_hours)
    base = 0.42 + 0.27 * np.sin(2 * np.pi * ((hours % 24) - 9.0) / 24.0)
    z = 0.0
    level = np.empty(n_hours)
    for h in range(n_hours):
        z = 0.72 * z + rng.normal(0.0, 0.2)
        level[h] = min(max(base[h] + z, 0.0), 1.0)
    per_period = level * peak_kw / 4.0
    return np.repeat(per_period, 4)[:n_periods]


def synth_price_trace(n_periods: int, seed: int) -> np.ndarray:
    """Double-peaked day-ahead price trace (cents per kWh), strictly positive."""
    rng = np.random.default_rng(seed)
    n_hours = -(-n_periods // 4)
    hours = np.arange(n_hours) % 24
    base = (3.0
            + 1.2 * np.exp(-((hours - 8.5) / 2.5) ** 2)
            + 1.8 * np.exp(-((hours - 19.0) / 3.0) ** 2)
            - 0.8 * np.exp(-((hours - 3.0) / 3.0) ** 2))
    z = 0.0
    noise = np.empty(n_hours)
    for h in range(n_hours):
        z = 0.6 * z + rng.normal(0.0, 0.25)
        noise[h] = z
    per_hour = np.maximum(base + noise, 0.8)
    return np.repeat(per_hour, 4)[:n_periods]


def synthetic_scenario(
    config: ScenarioConfig,
    lam: float = 1.0,
    delta: float = 0.25,
    p_g_max_kwh: float = float("inf"),
    wind_peak_kw: float = 230.0,
    wind_seed_offset: int = 10_000,
    price_seed_offset: int = 20_000,
) -> Scenario:
    """Generate sessions and attach bundled synthetic wind/price traces.

    The traces extend past the nominal horizon far enough to cover sessions
    that span midnight of the last day.
    """
    sessions = generate(config)
    last_dep = max(s.t_dep for s in sessions)
    horizon = max(config.days * 96, last_dep)
    grid = TimeGrid(horizon_periods=horizon)
    wind = synth_wind_trace(horizon, config.seed + wind_seed_offset, wind_peak_kw)
    price = synth_price_trace(horizon, config.seed + price_seed_offset)
    return Scenario(grid=grid, wind_kwh=wind, price_cents_per_kwh=price,
                    sessions=sessions, lam=lam, delta=delta,
                    p_g_max_kwh=p_g_max_kwh, seed=config.seed)


def fit_future_demand_model(sessions: tuple[EvSession, ...] | list[EvSession],
                            grid: TimeGrid) -> FutureDemandModel:
    """Estimate the unseen-arrival demand model from a session history."""
    if not sessions:
        raise DomainError("cannot fit a future-demand model on an empty history")
    needs = [s.soc_desired_kwh - s.soc_init_kwh for s in sessions]
    plugs = [s.n_plug_periods for s in sessions]
    ppd = grid.periods_per_day
    n_days = max(s.t_arr for s in sessions) // ppd + 1
    rate = np.zeros(ppd)
    for s in sessions:
        rate[s.t_arr % ppd] += 1.0
    rate /= n_days
    return FutureDemandModel(
        expected_required_charge_kwh=float(np.mean(needs)),
        expected_plug_periods=float(np.mean(plugs)),
        arrival_rate=rate,
    )

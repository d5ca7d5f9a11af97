"""Core domain model: time grid, EV sessions, scenarios, and schedules.

Conventions used throughout the package:

* time is discretized into equal periods of ``delta_t_minutes``; period ``t``
  denotes the half-open slot ``[t, t+1)``,
* state of charge (SOC) is sampled at period *boundaries*, so a session
  plugged over periods ``t_arr .. t_dep-1`` has SOC values at times
  ``t_arr .. t_dep`` inclusive,
* energies are plain floats in kWh and all energy comparisons use the
  absolute tolerance ``KWH_TOL``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

#: absolute tolerance (kWh) for energy comparisons everywhere in the package
KWH_TOL = 1e-6

#: tolerance for the "at most one of G and Omega is positive" product check
BALANCE_PRODUCT_TOL = 1e-9


class Mode(enum.Enum):
    """Participation mode of a session: charge-only or bidirectional."""

    G2V = "g2v"
    V2G = "v2g"


class DomainError(ValueError):
    """Invalid domain data (bad session, malformed scenario, ...)."""


class MinimumUnreachableError(DomainError):
    """The minimum SOC cannot be reached within the plug-in window."""


@dataclass(frozen=True)
class TimeGrid:
    """Discretization of the planning horizon.

    ``horizon_periods`` is the number of periods covered by the scenario
    traces; ``phi(j)`` maps a planning index (one per planning interval,
    hourly by default) to the period index where that interval starts.
    """

    delta_t_minutes: int = 15
    periods_per_day: int = 96
    horizon_periods: int = 96
    planning_interval_minutes: int = 60

    def __post_init__(self) -> None:
        if self.delta_t_minutes <= 0 or self.horizon_periods <= 0:
            raise DomainError("grid dimensions must be positive")
        if self.periods_per_day * self.delta_t_minutes != 24 * 60:
            raise DomainError("periods_per_day inconsistent with delta_t")
        if self.planning_interval_minutes % self.delta_t_minutes != 0:
            raise DomainError("delta_t must divide the planning interval")

    @property
    def periods_per_planning_interval(self) -> int:
        return self.planning_interval_minutes // self.delta_t_minutes

    @property
    def hours_per_period(self) -> float:
        return self.delta_t_minutes / 60.0

    def phi(self, j: int) -> int:
        """First period index of planning interval ``j``."""
        return self.periods_per_planning_interval * j

    def planning_index_of_arrival(self, t_arr: int) -> int:
        """Planning index whose batch collects an arrival at period ``t_arr``.

        Arrivals in ``(phi(j-1), phi(j)]`` are batched at ``j``; an arrival
        exactly at a planning time is planned immediately.
        """
        return -(-t_arr // self.periods_per_planning_interval)


@dataclass(frozen=True)
class EvSpec:
    """Battery and charger ratings of one vehicle model."""

    acceptance_rate_kw: float
    battery_capacity_kwh: float
    charger_power_kw: float
    battery_cost_usd: float
    eta_c: float = 0.9
    eta_d: float = 0.9

    def __post_init__(self) -> None:
        for name in ("acceptance_rate_kw", "battery_capacity_kwh",
                     "charger_power_kw", "battery_cost_usd"):
            if getattr(self, name) < 0:
                raise DomainError(f"{name} must be non-negative")
        for name in ("eta_c", "eta_d"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise DomainError(f"{name} must lie in (0, 1]")


@dataclass(frozen=True)
class EvSession:
    """One plug-in episode of one vehicle."""

    id: str
    spec: EvSpec
    t_arr: int
    t_dep: int
    soc_init_kwh: float
    soc_desired_kwh: float
    soc_min_kwh: float
    mode: Mode = Mode.G2V

    def __post_init__(self) -> None:
        if self.t_arr < 0 or self.t_arr >= self.t_dep:
            raise DomainError(f"session {self.id}: need 0 <= t_arr < t_dep")
        cap = self.spec.battery_capacity_kwh
        for name in ("soc_init_kwh", "soc_desired_kwh", "soc_min_kwh"):
            v = getattr(self, name)
            if v < -KWH_TOL or v > cap + KWH_TOL:
                raise DomainError(f"session {self.id}: {name}={v} outside [0, capacity]")

    @property
    def plug_periods(self) -> range:
        """Periods during which the vehicle can act: ``t_arr .. t_dep - 1``."""
        return range(self.t_arr, self.t_dep)

    @property
    def n_plug_periods(self) -> int:
        return self.t_dep - self.t_arr

    @property
    def is_v2g(self) -> bool:
        return self.mode is Mode.V2G

    @property
    def below_minimum(self) -> bool:
        """True when the vehicle arrives below its minimum charge level."""
        return self.soc_init_kwh < self.soc_min_kwh - KWH_TOL


@dataclass(frozen=True)
class Scenario:
    """A complete planning instance: grid, traces, fleet, hyper-parameters.

    ``lam`` weights the battery-degradation term and ``delta`` scales the
    price-proportional curtailment penalty in the scheduling objective.
    """

    grid: TimeGrid
    wind_kwh: np.ndarray
    price_cents_per_kwh: np.ndarray
    sessions: tuple[EvSession, ...]
    lam: float = 1.0
    delta: float = 0.25
    p_g_max_kwh: float = math.inf
    discharge_price_factor: float = 0.9
    seed: int | None = None

    def __post_init__(self) -> None:
        wind = np.asarray(self.wind_kwh, dtype=float)
        price = np.asarray(self.price_cents_per_kwh, dtype=float)
        object.__setattr__(self, "wind_kwh", wind)
        object.__setattr__(self, "price_cents_per_kwh", price)
        h = self.grid.horizon_periods
        if wind.shape != (h,) or price.shape != (h,):
            raise DomainError("wind/price traces must cover exactly the horizon")
        if np.any(wind < 0):
            raise DomainError("wind trace must be non-negative")
        # Prices must be strictly positive and the curtailment weight
        # non-negative: G and Omega are defined through one-sided
        # inequalities and only tighten to max(0, .) when their objective
        # weights cannot reward inflating them.
        if np.any(price <= 0):
            raise DomainError("price trace must be strictly positive")
        if self.delta < 0:
            raise DomainError("curtailment weight delta must be >= 0")
        if not 0.0 <= self.lam <= 1.0:
            raise DomainError("lam must lie in [0, 1]")
        ids = [s.id for s in self.sessions]
        if len(set(ids)) != len(ids):
            raise DomainError("session ids must be unique")
        for s in self.sessions:
            if s.t_dep > h:
                raise DomainError(
                    f"session {s.id} departs at {s.t_dep} beyond horizon {h}")
        wind.flags.writeable = False
        price.flags.writeable = False

    @property
    def n_sessions(self) -> int:
        return len(self.sessions)

    def session_index(self, sid: str) -> int:
        for k, s in enumerate(self.sessions):
            if s.id == sid:
                return k
        raise KeyError(sid)

    def v2g_sessions(self) -> tuple[EvSession, ...]:
        return tuple(s for s in self.sessions if s.is_v2g)

    def scenario_key(self) -> str:
        """Stable identity used to refuse comparisons across different runs."""
        h = self.grid.horizon_periods
        return (f"seed={self.seed};n={self.n_sessions};h={h};"
                f"lam={self.lam!r};delta={self.delta!r};"
                f"wind0={float(self.wind_kwh[0])!r};price0={float(self.price_cents_per_kwh[0])!r}")


@dataclass(frozen=True)
class Schedule:
    """Fleet-wide rates plus the derived grid-supply and curtailment series.

    Row ``k`` of the rate matrices corresponds to ``session_ids[k]``.  The SOC
    matrix has one extra column: entry ``[k, t]`` is the charge level of
    session ``k`` at time ``t`` (period boundaries, so ``H + 1`` values).
    """

    session_ids: tuple[str, ...]
    x_c: np.ndarray
    x_d: np.ndarray
    g_kwh: np.ndarray
    omega_kwh: np.ndarray
    soc: np.ndarray

    def __post_init__(self) -> None:
        for name in ("x_c", "x_d", "g_kwh", "omega_kwh", "soc"):
            arr = np.asarray(getattr(self, name), dtype=float)
            object.__setattr__(self, name, arr)
            arr.flags.writeable = False
        n = len(self.session_ids)
        h = self.g_kwh.shape[0]
        if self.x_c.shape != (n, h) or self.x_d.shape != (n, h):
            raise DomainError("rate matrices must be (n_sessions, horizon)")
        if self.soc.shape != (n, h + 1):
            raise DomainError("soc matrix must be (n_sessions, horizon + 1)")

    @property
    def horizon(self) -> int:
        return int(self.g_kwh.shape[0])


@dataclass(frozen=True)
class Violation:
    """One constraint violation found by :func:`validate_schedule`."""

    kind: str
    session_id: str
    period: int
    amount: float
    message: str


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def max_energy_per_period(spec: EvSpec, grid: TimeGrid) -> float:
    """Maximum energy (kWh) a vehicle can charge in one period.

    The binding rating is the smaller of the vehicle acceptance rate and the
    charger power; charging and discharging limits are assumed equal.
    """
    return min(spec.acceptance_rate_kw, spec.charger_power_kw) * grid.hours_per_period


def t_min(session: EvSession, grid: TimeGrid) -> int:
    """Number of full-speed periods needed to lift SOC to the minimum level.

    Raises :class:`MinimumUnreachableError` when the minimum level cannot be
    reached before departure; callers then fall back to charging at full
    speed for the whole plug-in window and waive the minimum-SOC constraint.
    """
    deficit = session.soc_min_kwh - session.soc_init_kwh
    if deficit <= 0.0:
        return 0
    per_period = session.spec.eta_c * max_energy_per_period(session.spec, grid)
    if per_period <= 0.0:
        raise MinimumUnreachableError(
            f"session {session.id}: zero charge capability but below minimum")
    # guard against float noise pushing an exact multiple up by one period
    periods = math.ceil(deficit / per_period - 1e-9)
    if session.t_arr + periods > session.t_dep:
        raise MinimumUnreachableError(
            f"session {session.id}: needs {periods} periods to reach the minimum "
            f"level but only {session.n_plug_periods} are available")
    return periods


def soc_trajectory(
    session: EvSession,
    x_c_row: np.ndarray,
    x_d_row: np.ndarray | None,
    grid: TimeGrid,
) -> np.ndarray:
    """SOC values at times ``t_arr .. t_dep`` for plug-local rate rows.

    Charging behaviour is linear: each period adds ``eta_c * P_c * x_c`` and,
    for bidirectional sessions, removes ``P_d * x_d / eta_d``.
    """
    n = session.n_plug_periods
    x_c_row = np.asarray(x_c_row, dtype=float)
    if x_c_row.shape != (n,):
        raise DomainError("x_c row must cover exactly the plug period")
    p = max_energy_per_period(session.spec, grid)
    delta = session.spec.eta_c * p * x_c_row
    if session.is_v2g and x_d_row is not None:
        x_d_row = np.asarray(x_d_row, dtype=float)
        if x_d_row.shape != (n,):
            raise DomainError("x_d row must cover exactly the plug period")
        delta = delta - p * x_d_row / session.spec.eta_d
    out = np.empty(n + 1)
    out[0] = session.soc_init_kwh
    np.cumsum(delta, out=out[1:])
    out[1:] += session.soc_init_kwh
    return out


def assemble_schedule(scenario: Scenario, x_c: np.ndarray, x_d: np.ndarray) -> Schedule:
    """Build a full :class:`Schedule` from rate matrices.

    SOC rows are integrated from the rates; the grid-supply and curtailment
    series are tightened to the balance identity
    ``G - Omega = charge - discharge - wind`` with ``min(G, Omega) = 0``.
    """
    grid = scenario.grid
    h = grid.horizon_periods
    x_c = np.array(x_c, dtype=float)
    x_d = np.array(x_d, dtype=float)
    n = scenario.n_sessions
    if x_c.shape != (n, h) or x_d.shape != (n, h):
        raise DomainError("rate matrices must be (n_sessions, horizon)")
    soc = np.zeros((n, h + 1))
    net = -np.array(scenario.wind_kwh)
    for k, s in enumerate(scenario.sessions):
        p = max_energy_per_period(s.spec, grid)
        lo, hi = s.t_arr, s.t_dep
        traj = soc_trajectory(s, x_c[k, lo:hi], x_d[k, lo:hi] if s.is_v2g else None, grid)
        soc[k, :lo] = s.soc_init_kwh
        soc[k, lo:hi + 1] = traj
        soc[k, hi + 1:] = traj[-1]
        net += p * x_c[k]
        if s.is_v2g:
            net -= p * x_d[k]
    g = np.maximum(net, 0.0)
    omega = np.maximum(-net, 0.0)
    return Schedule(
        session_ids=tuple(s.id for s in scenario.sessions),
        x_c=x_c, x_d=x_d, g_kwh=g, omega_kwh=omega, soc=soc,
    )


def static_reachability(session: EvSession, grid: TimeGrid) -> bool:
    """True when full-speed charging over the whole plug window reaches the
    desired level (the condition that pins the full-speed fallback binary)."""
    p = max_energy_per_period(session.spec, grid)
    best = session.soc_init_kwh + session.spec.eta_c * p * session.n_plug_periods
    return best >= session.soc_desired_kwh - KWH_TOL


def validate_schedule(
    scenario: Scenario,
    schedule: Schedule,
    waived_desired: frozenset[str] | set[str] = frozenset(),
) -> list[Violation]:
    """Check a schedule against every operational constraint.

    Returns an empty list iff the schedule satisfies, within ``KWH_TOL``:
    rate bounds and plug-window support, charge/discharge exclusivity, SOC
    consistency and bounds, the minimum-level rule (never discharge below the
    minimum; once reached, never drop below), the desired-level rule (final
    SOC reaches the desired level whenever full-speed charging could have,
    minus explicit waivers granted by the dynamic planner), the transformer
    cap, and the grid/curtailment balance identity.
    """
    out: list[Violation] = []
    grid = scenario.grid
    h = grid.horizon_periods
    if tuple(schedule.session_ids) != tuple(s.id for s in scenario.sessions):
        raise DomainError("schedule session ids do not match the scenario")
    if schedule.horizon != h:
        raise DomainError("schedule horizon does not match the scenario")

    def add(kind: str, sid: str, t: int, amount: float, msg: str) -> None:
        out.append(Violation(kind, sid, t, float(amount), msg))

    net = -np.array(scenario.wind_kwh)
    for k, s in enumerate(scenario.sessions):
        p = max_energy_per_period(s.spec, grid)
        xc, xd = schedule.x_c[k], schedule.x_d[k]
        lo, hi = s.t_arr, s.t_dep
        inside = np.zeros(h, dtype=bool)
        inside[lo:hi] = True
        rate_tol = 1e-6
        for t in np.flatnonzero((xc < -rate_tol) | (xc > 1 + rate_tol)):
            add("rate_bounds", s.id, int(t), xc[t], "charge rate outside [0, 1]")
        for t in np.flatnonzero((xd < -rate_tol) | (xd > 1 + rate_tol)):
            add("rate_bounds", s.id, int(t), xd[t], "discharge rate outside [0, 1]")
        for t in np.flatnonzero(~inside & (np.abs(xc) > rate_tol)):
            add("plug_window", s.id, int(t), xc[t], "charge rate outside plug window")
        for t in np.flatnonzero(~inside & (np.abs(xd) > rate_tol)):
            add("plug_window", s.id, int(t), xd[t], "discharge rate outside plug window")
        if not s.is_v2g and np.any(np.abs(xd) > rate_tol):
            t = int(np.flatnonzero(np.abs(xd) > rate_tol)[0])
            add("mode", s.id, t, xd[t], "charge-only session has discharge activity")
        if s.is_v2g:
            both = np.minimum(np.maximum(xc, 0), np.maximum(xd, 0))
            for t in np.flatnonzero(both > rate_tol):
                add("complementarity", s.id, int(t), both[t],
                    "charging and discharging in the same period")

        traj = soc_trajectory(s, xc[lo:hi], xd[lo:hi] if s.is_v2g else None, grid)
        drift = float(np.max(np.abs(schedule.soc[k, lo:hi + 1] - traj)))
        if drift > KWH_TOL:
            add("soc_consistency", s.id, lo, drift,
                "stored SOC row deviates from the rate integral")
        cap = s.spec.battery_capacity_kwh
        for i in np.flatnonzero(traj > cap + KWH_TOL):
            add("soc_cap", s.id, lo + int(i), traj[i] - cap, "SOC above capacity")
        # minimum-level rule, stated so it applies to any charging policy:
        # never discharge while below the minimum, and once the minimum has
        # been reached the SOC must not drop below it again.
        smin = s.soc_min_kwh
        reached = False
        for i, v in enumerate(traj):
            if reached and v < smin - KWH_TOL:
                add("soc_min", s.id, lo + i, smin - v, "SOC dropped below the minimum level")
            if v >= smin - KWH_TOL:
                reached = True
            elif s.is_v2g and i < len(traj) - 1 and xd[lo + i] > rate_tol:
                add("soc_min", s.id, lo + i, xd[lo + i],
                    "discharging while below the minimum level")
        if static_reachability(s, grid) and s.id not in waived_desired:
            if traj[-1] < s.soc_desired_kwh - KWH_TOL:
                add("soc_desired", s.id, hi, s.soc_desired_kwh - traj[-1],
                    "final SOC below the requested level although reachable")
        net += p * xc
        if s.is_v2g:
            net -= p * xd

    diff = (schedule.g_kwh - schedule.omega_kwh) - net
    for t in np.flatnonzero(np.abs(diff) > KWH_TOL):
        add("balance", "", int(t), diff[t],
            "grid minus curtailment does not equal net demand minus wind")
    prod = schedule.g_kwh * schedule.omega_kwh
    for t in np.flatnonzero(prod > BALANCE_PRODUCT_TOL):
        add("balance", "", int(t), prod[t], "grid supply and curtailment both positive")
    for t in np.flatnonzero((schedule.g_kwh < -KWH_TOL) | (schedule.omega_kwh < -KWH_TOL)):
        add("balance", "", int(t), min(schedule.g_kwh[t], schedule.omega_kwh[t]),
            "negative grid supply or curtailment")
    cap = scenario.p_g_max_kwh
    for t in np.flatnonzero(schedule.g_kwh > cap + KWH_TOL):
        add("transformer_cap", "", int(t), schedule.g_kwh[t] - cap,
            "grid supply above the transformer limit")
    return out

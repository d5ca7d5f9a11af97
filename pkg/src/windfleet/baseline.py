"""Business-as-usual reference policy: plug in, charge flat out until full.

The baseline never discharges and ignores prices, wind, and the transformer
cap (it models uncontrolled charging).  The only refinement over a literal
full-speed profile is the last period, whose rate is trimmed so the battery
lands exactly on its capacity instead of overshooting.
"""

from __future__ import annotations

import numpy as np

from .domain import KWH_TOL, Scenario, Schedule, assemble_schedule, max_energy_per_period


def bau_schedule(scenario: Scenario) -> Schedule:
    """Charge every session at full speed from arrival until the pack is full."""
    grid = scenario.grid
    h = grid.horizon_periods
    n = scenario.n_sessions
    x_c = np.zeros((n, h))
    x_d = np.zeros((n, h))
    for k, s in enumerate(scenario.sessions):
        per_period = s.spec.eta_c * max_energy_per_period(s.spec, grid)
        remaining = s.spec.battery_capacity_kwh - s.soc_init_kwh
        if per_period <= 0.0:
            continue
        for t in s.plug_periods:
            if remaining <= KWH_TOL:
                break
            rate = min(1.0, remaining / per_period)
            x_c[k, t] = rate
            remaining -= rate * per_period
    return assemble_schedule(scenario, x_c, x_d)

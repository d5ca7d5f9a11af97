"""Battery degradation cost models.

Two models are provided: a quadratic one used inside the scheduling
objective (it penalises both the energy throughput and period-to-period
fluctuations of the rate, which keeps the optimizer from toggling chargers
on and off), and a linear wear model used to cross-validate results.

Note on the linear model's units: the 4.2 cents/kWh wear figure is applied
to the *fraction* of the pack cycled per period, exactly as the source
formula is written.  Multiplying a cents-per-kWh rate by a dimensionless
fraction is only a cost in cents under that literal reading; the model is
kept verbatim and the physically-motivated absolute-throughput variant is
available behind ``absolute=True``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .domain import EvSession, TimeGrid, max_energy_per_period


@dataclass(frozen=True)
class DegradationParams:
    """Weights of the two degradation models (costs in cents)."""

    alpha: float = 0.05
    beta: float = 0.1
    linear_rate_cents_per_kwh: float = 4.2
    reference_pack_cost_usd: float = 5000.0

    def __post_init__(self) -> None:
        for name in ("alpha", "beta", "linear_rate_cents_per_kwh",
                     "reference_pack_cost_usd"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


def quadratic_cost(
    session: EvSession,
    grid: TimeGrid,
    x_c_row: np.ndarray,
    x_d_row: np.ndarray | None,
    params: DegradationParams = DegradationParams(),
    previous_rate_c: float = 0.0,
    previous_rate_d: float = 0.0,
) -> float:
    """Quadratic degradation cost (cents) of one session's rate rows.

    ``alpha`` weights squared ramps of the effective energy rate (including
    the ramp from ``previous_rate_*`` into the first period) and ``beta``
    weights the squared per-period energy itself.  ``previous_rate_*`` is 0
    for a fresh arrival and carries the last committed rate when a window is
    re-planned mid-session.
    """
    x_c = np.asarray(x_c_row, dtype=float)
    p = max_energy_per_period(session.spec, grid)
    e_c = session.spec.eta_c * p
    ramps = np.diff(x_c, prepend=previous_rate_c)
    cost = params.alpha * float(np.sum((e_c * ramps) ** 2))
    cost += params.beta * float(np.sum((e_c * x_c) ** 2))
    if session.is_v2g and x_d_row is not None:
        x_d = np.asarray(x_d_row, dtype=float)
        e_d = p / session.spec.eta_d
        ramps_d = np.diff(x_d, prepend=previous_rate_d)
        cost += params.alpha * float(np.sum((e_d * ramps_d) ** 2))
        cost += params.beta * float(np.sum((e_d * x_d) ** 2))
    return cost


def linear_cost(
    session: EvSession,
    grid: TimeGrid,
    x_c_row: np.ndarray,
    x_d_row: np.ndarray | None,
    params: DegradationParams = DegradationParams(),
    absolute: bool = False,
) -> float:
    """Linear wear cost (cents): rate times pack-cost ratio times the
    per-period fraction of the battery cycled.

    With ``absolute=False`` the per-period net energy is used verbatim, so
    discharge periods reduce the accounted wear; ``absolute=True`` charges
    wear on ``|net energy|`` instead.
    """
    x_c = np.asarray(x_c_row, dtype=float)
    p = max_energy_per_period(session.spec, grid)
    net = p * x_c
    if session.is_v2g and x_d_row is not None:
        net = net - p * np.asarray(x_d_row, dtype=float)
    if absolute:
        net = np.abs(net)
    frac = net / session.spec.battery_capacity_kwh
    scale = params.linear_rate_cents_per_kwh * (
        session.spec.battery_cost_usd / params.reference_pack_cost_usd)
    return scale * float(np.sum(frac))

"""Wind-generation forecasting for the re-planning loop.

Two forecasters share one interface: a perfect pass-through and a 20-state
Markov chain fitted on historical data.  The chain steps once per planning
interval (hourly by default); its state values are wind levels expressed in
kWh per decision period, so a per-period forecast holds the hourly
expectation constant across the interval's periods.  The interval that is
about to be planned always uses the realized trace (the forecast is perfect
for the next hour); expectations start one chain step out.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .domain import DomainError, TimeGrid


class PerfectForecaster:
    """Pass-through: the forecast equals the realized wind at every horizon."""

    name = "perfect"

    def window_forecast(self, realized: np.ndarray, start: int, stop: int,
                        grid: TimeGrid) -> np.ndarray:
        return np.asarray(realized, dtype=float)[start:stop].copy()


@dataclass(frozen=True)
class MarkovForecaster:
    """Finite-state Markov chain over discretized wind levels.

    ``states`` are the bin midpoints (kWh per period, strictly increasing),
    ``transitions`` is the row-stochastic one-step matrix at planning-interval
    resolution, and ``bin_edges`` maps observed levels to states (values above
    the training maximum clamp to the top state).
    """

    states: np.ndarray
    transitions: np.ndarray
    bin_edges: np.ndarray
    _powers: dict = field(default_factory=dict, compare=False, repr=False)

    name = "markov"

    def __post_init__(self) -> None:
        states = np.asarray(self.states, dtype=float)
        trans = np.asarray(self.transitions, dtype=float)
        edges = np.asarray(self.bin_edges, dtype=float)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "transitions", trans)
        object.__setattr__(self, "bin_edges", edges)
        k = states.shape[0]
        if trans.shape != (k, k):
            raise DomainError("transition matrix shape does not match states")
        if np.any(np.abs(trans.sum(axis=1) - 1.0) > 1e-9):
            raise DomainError("transition rows must sum to 1")
        if np.any(np.diff(states) <= 0):
            raise DomainError("state representatives must be strictly increasing")

    @property
    def n_states(self) -> int:
        return int(self.states.shape[0])

    def state_of(self, wind_level: float) -> int:
        idx = int(np.searchsorted(self.bin_edges, wind_level, side="right") - 1)
        return min(max(idx, 0), self.n_states - 1)

    def power(self, k: int) -> np.ndarray:
        """k-step transition matrix, cached incrementally so that the
        Chapman-Kolmogorov identity ``P^k = P^(k-1) P`` holds exactly."""
        if k < 0:
            raise ValueError("step count must be non-negative")
        if k == 0:
            return np.eye(self.n_states)
        if k == 1:
            return self.transitions
        cache = self._powers
        if k not in cache:
            cache[k] = self.power(k - 1) @ self.transitions
        return cache[k]

    def forecast(self, current_wind: float, k: int) -> float:
        """Expected wind level ``k`` chain steps after observing ``current_wind``.

        ``k = 0`` returns the observation itself (the next interval is known
        exactly); for ``k >= 1`` the expectation runs over the k-step state
        distribution.
        """
        if k < 0:
            raise ValueError("forecast horizon must be non-negative")
        if k == 0:
            return float(current_wind)
        row = self.power(k)[self.state_of(current_wind)]
        return float(row @ self.states)

    def window_forecast(self, realized: np.ndarray, start: int, stop: int,
                        grid: TimeGrid) -> np.ndarray:
        """Per-period forecast for ``[start, stop)`` at a planning time.

        The first planning interval copies the realized trace; each later
        interval is filled with the k-step expectation anchored at the first
        interval's mean level.
        """
        realized = np.asarray(realized, dtype=float)
        ppi = grid.periods_per_planning_interval
        out = np.empty(stop - start)
        first_stop = min(start + ppi, stop)
        out[: first_stop - start] = realized[start:first_stop]
        if first_stop < stop:
            anchor = float(np.mean(realized[start:first_stop]))
            pos = first_stop
            k = 1
            while pos < stop:
                level = self.forecast(anchor, k)
                chunk = min(ppi, stop - pos)
                out[pos - start: pos - start + chunk] = level
                pos += chunk
                k += 1
        return out

    def to_json(self) -> str:
        return json.dumps({
            "format": "windfleet-forecaster-v1",
            "states": self.states.tolist(),
            "transitions": self.transitions.tolist(),
            "bin_edges": self.bin_edges.tolist(),
        }, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "MarkovForecaster":
        data = json.loads(text)
        if data.get("format") != "windfleet-forecaster-v1":
            raise DomainError("not a forecaster file")
        return cls(states=np.array(data["states"], dtype=float),
                   transitions=np.array(data["transitions"], dtype=float),
                   bin_edges=np.array(data["bin_edges"], dtype=float))


def hourly_levels(trace_kwh: np.ndarray, grid: TimeGrid) -> np.ndarray:
    """Mean per-period wind level of each planning interval of a trace."""
    trace = np.asarray(trace_kwh, dtype=float)
    ppi = grid.periods_per_planning_interval
    usable = (trace.shape[0] // ppi) * ppi
    return trace[:usable].reshape(-1, ppi).mean(axis=1)


def fit(training_levels: np.ndarray, n_states: int = 20) -> MarkovForecaster:
    """Fit a Markov forecaster on a level sequence at chain resolution.

    States are ``n_states`` equal-width bins over ``[0, max(levels)]`` with
    midpoint representatives; transition counts over consecutive samples are
    row-normalized and unvisited rows become self-loops.
    """
    levels = np.asarray(training_levels, dtype=float)
    if levels.size < 2:
        raise DomainError("training trace must contain at least two chain steps")
    top = float(np.max(levels))
    if top <= 0.0:
        top = 1.0  # degenerate all-calm trace; any positive span works
    edges = np.linspace(0.0, top, n_states + 1)
    states = 0.5 * (edges[:-1] + edges[1:])
    idx = np.clip(np.searchsorted(edges, levels, side="right") - 1, 0, n_states - 1)
    counts = np.zeros((n_states, n_states))
    np.add.at(counts, (idx[:-1], idx[1:]), 1.0)
    rows = counts.sum(axis=1)
    trans = np.eye(n_states)
    visited = rows > 0
    trans[visited] = counts[visited] / rows[visited, None]
    return MarkovForecaster(states=states, transitions=trans, bin_edges=edges)

"""Best-first branch-and-bound over the convex QP relaxation.

Nodes are partial assignments of the binary columns, realized as bound
fixings handed to :func:`windfleet.qp.solve_qp`.  The node bound is the
relaxation optimum (clamped to the parent bound, so bounds are monotone
along any path); a node whose bound cannot beat the incumbent by more than
the relative gap tolerance is pruned.  With best-first order the first such
pop proves global optimality.

Two incumbent sources exist besides integral relaxation points: snapping
near-integral binaries followed by a fixed-binary re-solve, and a
complementarity heuristic that resolves simultaneous charge/discharge pairs
toward the larger side.  Branching prefers the full-speed fallback binaries
(one fixing collapses a whole constraint group) over the per-period
exclusivity binaries.
"""

from __future__ import annotations

import heapq
import time
from dataclasses import dataclass, field

import numpy as np

from .builder import MiqpProblem, PointCompleter
from .qp import (
    AdmmCache,
    QpError,
    QpIterationLimitError,
    QpResult,
    QpUnboundedError,
    QpWarmStart,
    SolverConfig,
    solve_qp,
)

#: problems below this size skip the operator-splitting accelerator
_ADMM_MIN_VARIABLES = 60

__all__ = ["SolverConfig", "Solution", "solve", "complementarity_heuristic"]


@dataclass(frozen=True)
class Solution:
    """Outcome of a branch-and-bound run."""

    status: str            # optimal | gap-limit | node-limit | infeasible | unbounded-guard
    x: np.ndarray | None
    objective: float
    bound: float
    gap: float
    nodes: int
    stats: dict = field(default_factory=dict)


def _gap(incumbent: float, bound: float) -> float:
    if not np.isfinite(incumbent):
        return float("inf")
    return max(0.0, (incumbent - bound) / max(1.0, abs(incumbent)))


def _fractionality(problem: MiqpProblem, x: np.ndarray,
                   lb: np.ndarray, ub: np.ndarray) -> np.ndarray:
    """Distance of each binary column from the nearest integer (0 if fixed)."""
    cols = problem.binary_cols
    if cols.size == 0:
        return np.empty(0)
    vals = x[cols]
    dist = np.minimum(np.abs(vals), np.abs(1.0 - vals))
    dist[lb[cols] >= ub[cols] - 1e-12] = 0.0
    return dist


class _PseudoCosts:
    """Average objective degradation per branching direction."""

    def __init__(self) -> None:
        self.down: dict[int, list[float]] = {}
        self.up: dict[int, list[float]] = {}

    def record(self, col: int, direction: int, gain: float) -> None:
        store = self.down if direction == 0 else self.up
        store.setdefault(col, []).append(max(gain, 0.0))

    def score(self, col: int, frac: float) -> float:
        down = self.down.get(col)
        up = self.up.get(col)
        if not down or not up:
            return frac  # fall back to fractionality until both sides seen
        d = sum(down) / len(down)
        u = sum(up) / len(up)
        return min(d, u) + 1e-6 * frac


def _select_branch_column(problem: MiqpProblem, x: np.ndarray, lb: np.ndarray,
                          ub: np.ndarray, config: SolverConfig,
                          pseudo: _PseudoCosts) -> int | None:
    dist = _fractionality(problem, x, lb, ub)
    if dist.size == 0:
        return None
    # branch below the acceptance tolerance too: a point this close to
    # integral only reaches here when snapping it failed
    candidates = np.flatnonzero(dist > 1e-9)
    if candidates.size == 0:
        return None
    cols = problem.binary_cols[candidates]
    # fallback binaries first: fixing one collapses a whole constraint group
    z_mask = np.array([problem.variables[c][0] == "z" for c in cols])
    if z_mask.any():
        cols = cols[z_mask]
        candidates = candidates[z_mask]
    if config.branching_rule == "pseudo-cost":
        scores = np.array([pseudo.score(int(c), float(dist[k]))
                           for c, k in zip(cols, candidates)])
    else:
        scores = dist[candidates]
    best = float(np.max(scores))
    tied = cols[scores >= best - 1e-15]
    return int(np.min(tied))


def _apply_fixings(problem: MiqpProblem, completer: PointCompleter,
                   x: np.ndarray, lb: np.ndarray, ub: np.ndarray,
                   fixings: dict[int, float]) -> QpWarmStart:
    """Project a point onto a set of binary fixings and re-derive the rest.

    Exclusivity partners follow automatically (their sum row pins them) and
    the rates they cap are pulled inside the new caps; the completer then
    rebuilds SOC chains and grid/curtailment columns so the projected point
    is feasible whenever the fixing itself is.
    """
    x2 = np.clip(x, lb, ub)
    by_key = completer.by_key
    partner_role = {"y_c": "y_d", "y_d": "y_c"}
    for col, value in fixings.items():
        x2[col] = value
        role, sid, t = problem.variables[col]
        if role in partner_role:
            mate = by_key.get((partner_role[role], sid, t))
            if mate is not None and lb[mate] < ub[mate] - 1e-12:
                x2[mate] = 1.0 - value
    for col in np.flatnonzero(lb >= ub - 1e-12):
        x2[col] = lb[col]
    # pull rates inside the caps their exclusivity binaries now impose
    for key, col in by_key.items():
        role, sid, t = key
        if role == "y_c":
            mate = by_key.get(("x_c", sid, t))
            if mate is not None:
                x2[mate] = min(x2[mate], max(1.0 - x2[col], lb[mate]))
        elif role == "y_d":
            mate = by_key.get(("x_d", sid, t))
            if mate is not None:
                x2[mate] = min(x2[mate], max(1.0 - x2[col], lb[mate]))
    x2 = completer.complete(np.clip(x2, lb, ub))
    if completer.top_up(x2, lb, ub):
        x2 = completer.complete(np.clip(x2, lb, ub))
    return QpWarmStart(x2, np.empty(0, dtype=int), np.empty(0, dtype=int),
                       np.empty(0, dtype=int))


def _polish_incumbent(problem: MiqpProblem, completer: PointCompleter,
                      x: np.ndarray, lb: np.ndarray, ub: np.ndarray,
                      config: SolverConfig, admm: AdmmCache | None) -> QpResult | None:
    """Snap near-integral binaries and re-solve with them fixed."""
    cols = problem.binary_cols
    if cols.size == 0:
        return None
    if float(np.max(_fractionality(problem, x, lb, ub), initial=0.0)) <= 1e-9:
        return None  # already integral to machine level, caller keeps the point
    lb2, ub2 = lb.copy(), ub.copy()
    snapped = np.round(x[cols])
    lb2[cols] = snapped
    ub2[cols] = snapped
    warm = _apply_fixings(problem, completer, x, lb2, ub2,
                          {int(c): float(v) for c, v in zip(cols, snapped)})
    try:
        result = solve_qp(problem, config, warm_start=warm, lb=lb2, ub=ub2,
                          admm=admm, refine=completer.repair)
    except QpError:
        return None
    return result if result.status == "optimal" else None


def complementarity_heuristic(
    problem: MiqpProblem,
    relaxation: QpResult,
    config: SolverConfig | None = None,
    lb: np.ndarray | None = None,
    ub: np.ndarray | None = None,
    completer: PointCompleter | None = None,
    admm: AdmmCache | None = None,
) -> QpResult | None:
    """Build a feasible incumbent from a (possibly fractional) relaxation point.

    For every period where a session both charges and discharges, the larger
    rate survives: the exclusivity binaries are fixed accordingly, fallback
    binaries are rounded, and one QP re-solve repairs the SOC trajectory.
    Returns None when the repair fails.
    """
    config = config or SolverConfig()
    lb = problem.lb if lb is None else lb
    ub = problem.ub if ub is None else ub
    cols = problem.binary_cols
    if cols.size == 0:
        return relaxation
    if float(np.max(_fractionality(problem, relaxation.x, lb, ub), initial=0.0)) <= 1e-9:
        return relaxation
    completer = completer or PointCompleter(problem)
    if admm is None and problem.n_variables >= _ADMM_MIN_VARIABLES:
        admm = AdmmCache(problem)
    by_key = completer.by_key
    x = relaxation.x
    fixings: dict[int, float] = {}
    for col in cols:
        role, sid, t = problem.variables[col]
        if lb[col] >= ub[col] - 1e-12:
            continue
        if role in ("y_c", "y_d"):
            xc_col = by_key.get(("x_c", sid, t))
            xd_col = by_key.get(("x_d", sid, t))
            xc = x[xc_col] if xc_col is not None else 0.0
            xd = x[xd_col] if xd_col is not None else 0.0
            charging = xc >= xd
            value = (0.0 if charging else 1.0) if role == "y_c" \
                else (1.0 if charging else 0.0)
        else:
            value = float(np.round(x[col]))
        fixings[int(col)] = value
    lb2, ub2 = lb.copy(), ub.copy()
    for col, value in fixings.items():
        lb2[col] = value
        ub2[col] = value
    warm = _apply_fixings(problem, completer, x, lb2, ub2, fixings)
    try:
        result = solve_qp(problem, config, warm_start=warm, lb=lb2, ub=ub2,
                          admm=admm, refine=completer.repair)
    except QpError:
        return None
    return result if result.status == "optimal" else None


def solve(problem: MiqpProblem, config: SolverConfig | None = None,
          trace=None, root_warm: QpWarmStart | None = None) -> Solution:
    """Solve a convex MIQP to the configured relative gap.

    Returns a proven-optimal solution when the tree is exhausted or every
    open node is within the gap tolerance of the incumbent; node/time limits
    return the best incumbent with an honest bound and ``node-limit`` status.
    """
    config = config or SolverConfig()
    lb0 = problem.lb.copy()
    ub0 = problem.ub.copy()
    t_start = time.perf_counter()
    qp_iters = 0
    pseudo = _PseudoCosts()
    completer = PointCompleter(problem)
    admm = AdmmCache(problem) if problem.n_variables >= _ADMM_MIN_VARIABLES else None

    def log(line: str) -> None:
        if trace is not None:
            trace.write(line + "\n")

    def solve_node(warm, lb, ub):
        nonlocal qp_iters
        try:
            r = solve_qp(problem, config, warm_start=warm, lb=lb, ub=ub,
                         admm=admm, refine=completer.repair)
        except QpIterationLimitError:
            if warm is None:
                raise
            r = solve_qp(problem, config, warm_start=None, lb=lb, ub=ub,
                         admm=admm, refine=completer.repair)
        qp_iters += r.iterations
        return r

    try:
        root = solve_node(root_warm, lb0, ub0)
    except QpUnboundedError as exc:
        return Solution("unbounded-guard", None, float("-inf"), float("-inf"),
                        float("inf"), 1, {"error": str(exc)})
    if root.status == "infeasible":
        log("node=0 depth=0 bound=inf action=infeasible")
        return Solution("infeasible", None, float("inf"), float("inf"),
                        float("inf"), 1, {})
    log(f"node=0 depth=0 bound={root.objective:.10g} action=root")

    incumbent_x: np.ndarray | None = None
    incumbent_obj = float("inf")
    heuristic_used = False
    int_tol = config.integrality_tolerance

    def try_incumbent(result: QpResult, lb, ub) -> bool:
        nonlocal incumbent_x, incumbent_obj
        dist = float(np.max(_fractionality(problem, result.x, lb, ub), initial=0.0))
        if dist > int_tol:
            return False
        if dist > 1e-9:
            polished = _polish_incumbent(problem, completer, result.x, lb, ub,
                                         config, admm)
            if polished is None:
                return False
            result = polished
        if result.objective < incumbent_obj - 1e-12:
            incumbent_x = result.x
            incumbent_obj = result.objective
            log(f"node=* depth=* bound={result.objective:.10g} action=incumbent")
        return True

    root_integral = try_incumbent(root, lb0, ub0)
    if not root_integral:
        heur = complementarity_heuristic(problem, root, config, lb0, ub0,
                                         completer, admm)
        if heur is not None and heur.objective < incumbent_obj:
            incumbent_x = heur.x
            incumbent_obj = heur.objective
            heuristic_used = True
            log(f"node=* depth=* bound={heur.objective:.10g} action=heuristic-incumbent")

    nodes_processed = 1
    status = "optimal"
    bound_proven = root.objective
    leaked_bounds: list[float] = []
    heap: list = []
    seq = 0
    if not root_integral:
        heapq.heappush(heap, (root.objective, seq, lb0, ub0, root.warm_start(), 0))
        seq += 1

    def prune_threshold() -> float:
        return incumbent_obj - config.relative_gap_tolerance * max(1.0, abs(incumbent_obj))

    while heap:
        bound, _, lb, ub, warm, depth = heapq.heappop(heap)
        if bound >= prune_threshold():
            bound_proven = bound
            break
        if nodes_processed >= config.node_limit:
            status = "node-limit"
            bound_proven = bound
            break
        if config.time_limit_s is not None and \
                time.perf_counter() - t_start > config.time_limit_s:
            status = "node-limit"
            bound_proven = bound
            break

        # the relaxation point travels in the warm start; branch on it
        col = _select_branch_column(problem, warm.x, lb, ub, config, pseudo)
        if col is None:
            # exactly integral point whose acceptance failed earlier; keep the
            # bound honest and give up optimality claims for this subtree
            r = solve_node(warm, lb, ub)
            nodes_processed += 1
            if not try_incumbent(r, lb, ub):
                status = "gap-limit"
                leaked_bounds.append(bound)
            continue
        for value in (0.0, 1.0):
            lb2, ub2 = lb.copy(), ub.copy()
            lb2[col] = value
            ub2[col] = value
            projected = _apply_fixings(problem, completer, warm.x, lb2, ub2,
                                       {int(col): value})
            r = solve_node(projected, lb2, ub2)
            nodes_processed += 1
            key = problem.variables[col]
            if r.status == "infeasible":
                log(f"node={nodes_processed} depth={depth + 1} bound=inf "
                    f"action=infeasible({key[0]}:{key[1]}:{key[2]}={value:g})")
                continue
            child_bound = max(r.objective, bound)
            pseudo.record(col, int(value), r.objective - bound)
            log(f"node={nodes_processed} depth={depth + 1} bound={child_bound:.10g} "
                f"action=branch({key[0]}:{key[1]}:{key[2]}={value:g})")
            if try_incumbent(r, lb2, ub2):
                continue
            if child_bound < prune_threshold():
                heapq.heappush(heap, (child_bound, seq, lb2, ub2, r.warm_start(),
                                      depth + 1))
                seq += 1
    else:
        # tree exhausted: the incumbent (if any) is optimal
        bound_proven = incumbent_obj if incumbent_x is not None else float("inf")

    if incumbent_x is None:
        if status == "optimal":
            return Solution("infeasible", None, float("inf"), float("inf"),
                            float("inf"), nodes_processed, {})
        return Solution(status, None, float("inf"),
                        min([bound_proven] + leaked_bounds + [h[0] for h in heap]),
                        float("inf"), nodes_processed, {})

    open_bounds = [h[0] for h in heap] + leaked_bounds
    final_bound = min([bound_proven] + open_bounds) if status != "optimal" else \
        min([bound_proven] + leaked_bounds)
    final_bound = min(final_bound, incumbent_obj)
    gap = _gap(incumbent_obj, final_bound)
    if status == "optimal" and gap > config.relative_gap_tolerance:
        status = "gap-limit"
    stats = {
        "qp_iterations": qp_iters,
        "heuristic_incumbent": heuristic_used,
        "wall_time_s": time.perf_counter() - t_start,
    }
    return Solution(status, incumbent_x, incumbent_obj, final_bound, gap,
                    nodes_processed, stats)

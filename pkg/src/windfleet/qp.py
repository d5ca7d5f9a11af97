"""Primal active-set solver for convex quadratic programs.

Solves

    minimize    0.5 x'Qx + c'x
    subject to  A_eq x = b_eq,   A_ub x <= b_ub,   lb <= x <= ub

with Q positive semidefinite (Q = 0 gives the LP special case).  Equality
rows stay in the working set permanently; active bounds eliminate their
columns from the KKT system, so the factored system only spans free columns
and active rows.  Each iteration solves one sparse KKT system (SuperLU) with
a tiny proximal regularization that keeps the factorization nonsingular when
Q is singular on the free subspace or the working set is degenerate.

Feasibility is restored, when needed, by an elastic phase-1 run of the same
engine: one slack column per violated row, minimizing the total slack.  A
positive phase-1 optimum is an infeasibility certificate.

Iteration limits and numerical breakdowns raise typed exceptions; an
infeasible problem is a normal result, not an error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .builder import MiqpProblem

_STEP_TOL = 1e-9
_SNAP_TOL = 1e-9
_DIR_TOL = 1e-11
_STALL_LIMIT = 30
_UNBOUNDED_OBJECTIVE = -1e15


class QpError(RuntimeError):
    """Base class for solver failures that must not be ignored."""


class QpIterationLimitError(QpError):
    pass


class QpNumericalError(QpError):
    pass


class QpUnboundedError(QpError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    """Tolerances and limits shared by the QP engine and branch-and-bound."""

    relative_gap_tolerance: float = 1e-6
    absolute_feasibility_tolerance: float = 1e-7
    node_limit: int = 10 ** 6
    time_limit_s: float | None = None
    qp_max_iterations: int | None = None
    branching_rule: str = "most-fractional"
    integrality_tolerance: float = 1e-6

    def __post_init__(self) -> None:
        if self.relative_gap_tolerance <= 0 or self.absolute_feasibility_tolerance <= 0:
            raise ValueError("tolerances must be positive")
        if self.branching_rule not in ("most-fractional", "pseudo-cost"):
            raise ValueError("unknown branching rule")

    def qp_iteration_budget(self, n: int, m: int) -> int:
        if self.qp_max_iterations is not None:
            return self.qp_max_iterations
        return 500 + 12 * (n + m)


@dataclass(frozen=True)
class QpWarmStart:
    """Previous solution used to seed the working set."""

    x: np.ndarray
    active_rows: np.ndarray
    active_lo: np.ndarray
    active_up: np.ndarray


@dataclass(frozen=True)
class QpResult:
    status: str                      # "optimal" | "infeasible"
    x: np.ndarray
    objective: float
    iterations: int
    kkt_residual: float
    active_rows: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))
    active_lo: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))
    active_up: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))
    eq_multipliers: np.ndarray = field(default_factory=lambda: np.empty(0))
    row_multipliers: np.ndarray = field(default_factory=lambda: np.empty(0))
    infeasible_rows: tuple = ()

    def warm_start(self) -> QpWarmStart:
        return QpWarmStart(self.x, self.active_rows, self.active_lo, self.active_up)


class AdmmCache:
    """Operator-splitting accelerator shared across branch-and-bound nodes.

    The splitting solves ``min 0.5 x'Qx + c'x  s.t. l <= [A_eq; A_ub; I] x <= u``
    with one sparse factorization of the (bound-independent) KKT operator, so
    every node reuses it: fixing a binary only moves entries of ``l``/``u``.
    The iterate is inexact (used to seed the active-set engine, which owns
    the final KKT-accurate answer).
    """

    def __init__(self, problem: MiqpProblem, sigma: float = 1e-6,
                 rho: float = 0.1, alpha: float = 1.6) -> None:
        n = problem.n_variables
        self.n = n
        self.me = problem.a_eq.shape[0]
        self.mi = problem.a_ub.shape[0]
        self.sigma = sigma
        self.alpha = alpha
        blocks = [problem.a_eq, problem.a_ub, sp.identity(n, format="csr")]
        self.a_full = sp.vstack([b for b in blocks if b.shape[0]], format="csr")
        m = self.a_full.shape[0]
        rho_vec = np.full(m, rho)
        rho_vec[:self.me] = rho * 1e3          # equalities held much tighter
        self.rho = rho_vec
        self.q = problem.q.tocsr()
        self.c = problem.c
        k = sp.bmat([
            [self.q + sigma * sp.identity(n), self.a_full.T],
            [self.a_full, -sp.diags(1.0 / rho_vec)],
        ], format="csc")
        self.lu = spla.splu(k)
        self.b_eq = problem.b_eq
        self.b_ub = problem.b_ub

    def ranges(self, lb: np.ndarray, ub: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        l = np.concatenate([self.b_eq, np.full(self.mi, -np.inf), lb])
        u = np.concatenate([self.b_eq, self.b_ub, ub])
        return l, u

    def solve(self, lb: np.ndarray, ub: np.ndarray, x0: np.ndarray | None = None,
              max_iter: int = 2000, eps: float = 1e-6) -> np.ndarray:
        """Run the splitting to moderate accuracy; returns the primal point."""
        l, u = self.ranges(lb, ub)
        n = self.n
        x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).copy()
        z = np.clip(self.a_full @ x, l, u)
        y = np.zeros(self.a_full.shape[0])
        for it in range(max_iter):
            rhs = np.concatenate([self.sigma * x - self.c, z - y / self.rho])
            sol = self.lu.solve(rhs)
            x_t = sol[:n]
            nu = sol[n:]
            z_t = z + (nu - y) / self.rho
            x = self.alpha * x_t + (1 - self.alpha) * x
            z_hat = self.alpha * z_t + (1 - self.alpha) * z + y / self.rho
            z = np.clip(z_hat, l, u)
            y = self.rho * (z_hat - z)
            if it % 10 == 9 or it == max_iter - 1:
                ax = self.a_full @ x
                qx = self.q @ x
                r_prim = float(np.max(np.abs(ax - z), initial=0.0))
                r_dual = float(np.max(np.abs(qx + self.c + self.a_full.T @ y),
                                      initial=0.0))
                scale_p = 1.0 + max(float(np.max(np.abs(ax), initial=0.0)),
                                    float(np.max(np.abs(z), initial=0.0)))
                scale_d = 1.0 + max(float(np.max(np.abs(qx), initial=0.0)),
                                    float(np.max(np.abs(self.c), initial=0.0)))
                if r_prim <= eps * scale_p and r_dual <= eps * scale_d:
                    break
        return x


class _Engine:
    """One active-set run over fixed problem data."""

    strict_kkt = True

    def __init__(self, q, c, a_eq, b_eq, a_ub, b_ub, lb, ub, feas_tol, max_iter):
        self.q = q.tocsr()
        self.c = np.asarray(c, dtype=float)
        self.a_eq = a_eq.tocsr()
        self.b_eq = np.asarray(b_eq, dtype=float)
        self.a_ub = a_ub.tocsr()
        self.b_ub = np.asarray(b_ub, dtype=float)
        self.lb = np.asarray(lb, dtype=float)
        self.ub = np.asarray(ub, dtype=float)
        self.n = self.c.shape[0]
        self.me = self.b_eq.shape[0]
        self.mi = self.b_ub.shape[0]
        self.feas_tol = feas_tol
        self.dual_tol = max(1e-9, 0.1 * feas_tol)
        self.max_iter = max_iter
        q_scale = float(abs(self.q.max()) if self.q.nnz else 0.0)
        self.reg = 1e-10 * (1.0 + q_scale)
        self.fixed = self.ub - self.lb <= 1e-12

    # -- feasibility ------------------------------------------------------

    def residuals(self, x):
        r_eq = self.b_eq - self.a_eq @ x if self.me else np.empty(0)
        r_ub = self.b_ub - self.a_ub @ x if self.mi else np.empty(0)
        return r_eq, r_ub

    def max_violation(self, x):
        r_eq, r_ub = self.residuals(x)
        v = 0.0
        if self.me:
            v = max(v, float(np.max(np.abs(r_eq))))
        if self.mi:
            v = max(v, float(max(0.0, -np.min(r_ub))))
        v = max(v, float(np.max(np.maximum(self.lb - x, 0.0), initial=0.0)))
        v = max(v, float(np.max(np.maximum(x - self.ub, 0.0), initial=0.0)))
        return v

    def objective(self, x):
        return float(0.5 * x @ (self.q @ x) + self.c @ x)

    # -- core loop --------------------------------------------------------

    def run(self, x, act_row, act_lo, act_up):
        """Iterate from a feasible point; returns (x, iters, mult, sets)."""
        n = self.n
        x = x.copy()
        act_row = act_row.copy()
        act_lo = act_lo.copy()
        act_up = act_up.copy()
        act_lo |= self.fixed
        act_up &= ~self.fixed
        stall = 0
        bland = False
        iters = 0
        while True:
            if iters >= self.max_iter:
                raise QpIterationLimitError(
                    f"active-set iteration limit {self.max_iter} reached")
            iters += 1

            free = ~(act_lo | act_up)
            f_idx = np.flatnonzero(free)
            rows = np.flatnonzero(act_row)
            g = self.q @ x + self.c

            a_act, b_act = self._active_matrix(rows)
            m_act = a_act.shape[0]
            r_act = b_act - a_act @ x if m_act else np.empty(0)

            # rows whose free support vanished: they cannot move, so they
            # leave the KKT system (their residual is already ~0)
            if m_act and f_idx.size:
                a_f = a_act.tocsc()[:, f_idx].tocsr()
            else:
                a_f = sp.csr_matrix((m_act, f_idx.size))
            nz_rows = np.flatnonzero(np.diff(a_f.indptr) > 0) if m_act else np.empty(0, int)
            dead = np.setdiff1d(np.arange(m_act), nz_rows, assume_unique=False)
            if dead.size and np.max(np.abs(r_act[dead]), initial=0.0) > self.feas_tol:
                raise QpNumericalError("active constraint lost all free support "
                                       "while violated")

            p_f, mult = self._kkt_step(f_idx, a_f, nz_rows, g, r_act, m_act)
            p = np.zeros(n)
            if f_idx.size:
                p[f_idx] = p_f

            step_scale = 1.0 + float(np.max(np.abs(x)))
            if float(np.max(np.abs(p), initial=0.0)) <= _STEP_TOL * step_scale:
                drops = self._pick_drops(g, mult, rows, act_lo, act_up, bland)
                if not drops:
                    return self._finish(x, iters, g, mult, rows, act_row, act_lo, act_up)
                for kind, idx in drops:
                    if kind == "row":
                        act_row[idx] = False
                    elif kind == "lo":
                        act_lo[idx] = False
                    else:
                        act_up[idx] = False
                stall += 1
                bland = bland or stall >= _STALL_LIMIT
                continue

            alpha, block = self._ratio_test(x, p, act_row, act_lo, act_up, bland)
            if alpha is None:
                raise QpUnboundedError("unblocked descent ray")
            x = x + alpha * p
            if self.objective(x) < _UNBOUNDED_OBJECTIVE:
                raise QpUnboundedError("objective diverging to -infinity")
            if block is not None:
                kind, idx = block
                if kind == "row":
                    act_row[idx] = True
                elif kind == "lo":
                    act_lo[idx] = True
                    x[idx] = self.lb[idx]
                else:
                    act_up[idx] = True
                    x[idx] = self.ub[idx]
            if alpha <= 1e-12:
                stall += 1
                bland = bland or stall >= _STALL_LIMIT
            elif alpha > 1e-9:
                stall = 0
                bland = False

    def _active_matrix(self, rows):
        if self.me and rows.size:
            return sp.vstack([self.a_eq, self.a_ub[rows]], format="csr"), \
                np.concatenate([self.b_eq, self.b_ub[rows]])
        if self.me:
            return self.a_eq, self.b_eq
        if rows.size:
            return self.a_ub[rows].tocsr(), self.b_ub[rows]
        return sp.csr_matrix((0, self.n)), np.empty(0)

    def _kkt_step(self, f_idx, a_f, nz_rows, g, r_act, m_act):
        """Solve the regularized KKT system on free columns and live rows."""
        nf = f_idx.size
        mult = np.zeros(m_act)
        if nf == 0:
            return np.empty(0), mult
        q_ff = self.q[f_idx][:, f_idx]
        h = (q_ff + self.reg * sp.identity(nf, format="csr")).tocsr()
        g_f = g[f_idx]
        if nz_rows.size:
            a_live = a_f[nz_rows]
            k = sp.bmat([[h, a_live.T],
                         [a_live, -self.reg * sp.identity(nz_rows.size)]],
                        format="csc")
            rhs = np.concatenate([-g_f, r_act[nz_rows]])
        else:
            k = h.tocsc()
            rhs = -g_f
        try:
            lu = spla.splu(k)
            sol = lu.solve(rhs)
        except (RuntimeError, ValueError) as exc:
            raise QpNumericalError(f"KKT factorization failed: {exc}") from exc
        if not np.all(np.isfinite(sol)):
            raise QpNumericalError("KKT solve produced non-finite values")
        p_f = sol[:nf]
        if nz_rows.size:
            mult[nz_rows] = sol[nf:]
        return p_f, mult

    def _pick_drops(self, g, mult, rows, act_lo, act_up, bland):
        """Working-set members to release, by most negative multiplier.

        Releasing several clearly-wrong members at once cuts the long
        bound-release walks of cold starts; under the anti-cycling rule the
        set shrinks back to the single lowest-index candidate.
        """
        grad_l = g.copy()
        if mult.size:
            a_act, _ = self._active_matrix(rows)
            grad_l += a_act.T @ mult
        candidates = []
        n_eq = self.me
        for pos, row in enumerate(rows):
            nu = mult[n_eq + pos]
            if nu < -self.dual_tol:
                candidates.append((nu, 1, int(row), "row"))
        for idx in np.flatnonzero(act_lo & ~self.fixed):
            mu = grad_l[idx]
            if mu < -self.dual_tol:
                candidates.append((mu, 2, int(idx), "lo"))
        for idx in np.flatnonzero(act_up):
            mu = -grad_l[idx]
            if mu < -self.dual_tol:
                candidates.append((mu, 3, int(idx), "up"))
        if not candidates:
            return []
        if bland:
            candidates.sort(key=lambda c: (c[1], c[2]))
            return [(candidates[0][3], candidates[0][2])]
        candidates.sort(key=lambda c: (c[0], c[1], c[2]))
        if len(candidates) > 8:
            # keep the clearly-negative half, at least eight
            cut = max(8, len(candidates) // 2)
            batch = [c for c in candidates[:cut] if c[0] < 0.1 * candidates[0][0]]
            return [(kind, idx) for _, _, idx, kind in batch]
        return [(candidates[0][3], candidates[0][2])]

    def _ratio_test(self, x, p, act_row, act_lo, act_up, bland):
        """Largest step along p before an inactive constraint blocks."""
        best_alpha = 1.0
        block = None
        candidates = []
        if self.mi:
            inactive = np.flatnonzero(~act_row)
            if inactive.size:
                s = self.a_ub[inactive] @ p
                gaps = self.b_ub[inactive] - self.a_ub[inactive] @ x
                for pos in np.flatnonzero(s > _DIR_TOL):
                    alpha = max(gaps[pos], 0.0) / s[pos]
                    candidates.append((alpha, 1, int(inactive[pos]), "row"))
        moving = np.flatnonzero(np.abs(p) > _DIR_TOL)
        for idx in moving:
            if p[idx] < 0 and not act_lo[idx] and np.isfinite(self.lb[idx]):
                alpha = max((self.lb[idx] - x[idx]) / p[idx], 0.0)
                candidates.append((alpha, 2, int(idx), "lo"))
            elif p[idx] > 0 and not act_up[idx] and np.isfinite(self.ub[idx]):
                alpha = max((self.ub[idx] - x[idx]) / p[idx], 0.0)
                candidates.append((alpha, 3, int(idx), "up"))
        if candidates:
            min_alpha = min(c[0] for c in candidates)
            if min_alpha < 1.0 - 1e-12:
                tied = [c for c in candidates if c[0] <= min_alpha + 1e-12]
                tied.sort(key=lambda c: (c[1], c[2]) if bland else (c[0], c[1], c[2]))
                alpha, _, idx, kind = tied[0]
                return max(alpha, 0.0), (kind, idx)
        if not candidates and float(np.max(np.abs(p))) > 1e10:
            # no finite bound blocks an enormous step: treat as a ray
            return None, None
        return 1.0, None

    def _finish(self, x, iters, g, mult, rows, act_row, act_lo, act_up):
        grad_l = g.copy()
        if mult.size:
            a_act, _ = self._active_matrix(rows)
            grad_l += a_act.T @ mult
        free = ~(act_lo | act_up)
        stat = float(np.max(np.abs(grad_l[free]), initial=0.0))
        kkt = max(self.max_violation(x), stat)
        if self.strict_kkt and kkt > 10 * self.feas_tol:
            raise QpNumericalError(f"converged point fails the KKT check ({kkt:.2e})")
        eq_mult = mult[:self.me] if mult.size else np.zeros(self.me)
        row_mult = np.zeros(self.mi)
        if rows.size:
            row_mult[rows] = mult[self.me:]
        return x, iters, kkt, eq_mult, row_mult, act_row, act_lo, act_up


def _initial_sets(engine: _Engine, x: np.ndarray, warm: QpWarmStart | None,
                  bound_tol: float = _SNAP_TOL,
                  row_tol: float = _SNAP_TOL) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Seed the working set from bound contact and tight rows (snaps x)."""
    act_lo = np.abs(x - engine.lb) <= bound_tol
    act_up = (np.abs(x - engine.ub) <= bound_tol) & ~act_lo
    act_row = np.zeros(engine.mi, dtype=bool)
    if engine.mi:
        res = engine.b_ub - engine.a_ub @ x
        act_row = np.abs(res) <= row_tol
    if warm is not None and engine.mi:
        keep = warm.active_rows[warm.active_rows < engine.mi]
        if keep.size:
            res = engine.b_ub[keep] - engine.a_ub[keep] @ x
            act_row[keep[np.abs(res) <= 1e-7]] = True
    x[act_lo] = engine.lb[act_lo]
    x[act_up] = engine.ub[act_up]
    return act_row, act_lo, act_up


def _phase1(engine: _Engine, x0: np.ndarray, feas_tol: float, max_iter: int):
    """Elastic feasibility restoration.

    One slack column is added per violated row, minimizing the total slack
    with the same active-set engine (the extended start is feasible by
    construction).  Returns ``(feasible x, ())`` or ``(None, guilty rows)``.
    """
    r_eq, r_ub = engine.residuals(x0)
    bad_eq = np.flatnonzero(np.abs(r_eq) > feas_tol) if engine.me else np.empty(0, int)
    bad_ub = np.flatnonzero(r_ub < -feas_tol) if engine.mi else np.empty(0, int)
    n_slack = bad_eq.size + bad_ub.size
    if n_slack == 0:
        return x0, ()
    n = engine.n
    s0 = np.empty(n_slack)
    eq_entries: list[tuple[int, int, float]] = []
    ub_entries: list[tuple[int, int, float]] = []
    for k, row in enumerate(bad_eq):
        # slack sign follows the residual so the elastic row holds at x0
        eq_entries.append((int(row), k, 1.0 if r_eq[row] > 0 else -1.0))
        s0[k] = abs(r_eq[row])
    for k, row in enumerate(bad_ub):
        ub_entries.append((int(row), bad_eq.size + k, -1.0))
        s0[bad_eq.size + k] = -r_ub[row]

    def pad(entries, m):
        if not entries:
            return sp.coo_matrix((m, n_slack))
        r, c, v = zip(*entries)
        return sp.coo_matrix((v, (r, c)), shape=(m, n_slack))

    a_eq_ext = sp.hstack([engine.a_eq, pad(eq_entries, engine.me)], format="csr") \
        if engine.me else sp.csr_matrix((0, n + n_slack))
    a_ub_ext = sp.hstack([engine.a_ub, pad(ub_entries, engine.mi)], format="csr") \
        if engine.mi else sp.csr_matrix((0, n + n_slack))
    sub = _Engine(sp.csr_matrix((n + n_slack, n + n_slack)),
                  np.concatenate([np.zeros(n), np.ones(n_slack)]),
                  a_eq_ext, engine.b_eq, a_ub_ext, engine.b_ub,
                  np.concatenate([engine.lb, np.zeros(n_slack)]),
                  np.concatenate([engine.ub, np.full(n_slack, math.inf)]),
                  engine.feas_tol, max_iter)
    # the restoration phase only needs primal feasibility; its own dual
    # residuals are irrelevant to the caller
    sub.strict_kkt = False
    x_ext = np.concatenate([x0, s0])
    act_row, act_lo, act_up = _initial_sets(sub, x_ext, None)
    x_ext = sub.run(x_ext, act_row, act_lo, act_up)[0]
    scale = 1.0 + float(np.max(np.abs(engine.b_eq), initial=0.0)) \
        + float(np.max(np.abs(engine.b_ub), initial=0.0))
    if float(np.sum(x_ext[n:])) > 1e-7 * scale:
        guilty = tuple(int(r) for r, s in
                       zip(list(bad_eq) + list(bad_ub), x_ext[n:]) if s > 1e-7)
        return None, guilty
    return x_ext[:n], ()


def _bound_prefilter(problem: MiqpProblem, lb: np.ndarray, ub: np.ndarray) -> tuple | None:
    """Interval-arithmetic infeasibility test over the rows (cheap, sound)."""
    for mat, rhs, is_eq in ((problem.a_ub, problem.b_ub, False),
                            (problem.a_eq, problem.b_eq, True)):
        if mat.shape[0] == 0:
            continue
        pos = mat.maximum(0)
        neg = mat.minimum(0)
        min_act = pos @ lb + neg @ ub
        if np.any(min_act > rhs + 1e-9):
            return tuple(np.flatnonzero(min_act > rhs + 1e-9)[:4])
        if is_eq:
            max_act = pos @ ub + neg @ lb
            if np.any(max_act < rhs - 1e-9):
                return tuple(np.flatnonzero(max_act < rhs - 1e-9)[:4])
    return None


def solve_qp(
    problem: MiqpProblem,
    config: SolverConfig | None = None,
    warm_start: QpWarmStart | None = None,
    lb: np.ndarray | None = None,
    ub: np.ndarray | None = None,
    admm: AdmmCache | None = None,
    refine=None,
) -> QpResult:
    """Solve the continuous relaxation (or any bound restriction) of a problem.

    ``lb``/``ub`` override the problem bounds, which is how branch-and-bound
    fixes binaries.  Warm starts seed both the point and the working set;
    when an :class:`AdmmCache` is supplied, the splitting method produces a
    near-optimal start that the active-set engine polishes.  Returns an
    optimal point with KKT residuals within the configured feasibility
    tolerance, or an infeasibility certificate; iteration limits and
    numerical breakdowns raise :class:`QpError` subclasses.
    """
    config = config or SolverConfig()
    lb = problem.lb if lb is None else np.asarray(lb, dtype=float)
    ub = problem.ub if ub is None else np.asarray(ub, dtype=float)
    if np.any(lb > ub + 1e-12):
        return QpResult(status="infeasible", x=np.zeros(problem.n_variables),
                        objective=math.nan, iterations=0, kkt_residual=math.nan,
                        infeasible_rows=("bounds",))
    guilty_rows = _bound_prefilter(problem, lb, ub)
    if guilty_rows is not None:
        return QpResult(status="infeasible", x=np.zeros(problem.n_variables),
                        objective=math.nan, iterations=0, kkt_residual=math.nan,
                        infeasible_rows=guilty_rows)
    feas_tol = config.absolute_feasibility_tolerance
    max_iter = config.qp_iteration_budget(problem.n_variables,
                                          problem.a_ub.shape[0] + problem.a_eq.shape[0])
    engine = _Engine(problem.q, problem.c, problem.a_eq, problem.b_eq,
                     problem.a_ub, problem.b_ub, lb, ub, feas_tol, max_iter)

    candidates: list[np.ndarray] = []
    if warm_start is not None:
        candidates.append(np.clip(warm_start.x, lb, ub))
    if problem.feasible_hint is not None:
        candidates.append(np.clip(problem.feasible_hint, lb, ub))
    candidates.append(np.clip(np.zeros(problem.n_variables), lb, ub))

    row_seed_tol = _SNAP_TOL
    x0 = None
    if admm is not None:
        # the splitting point, snapped onto the bounds it grazes and repaired
        # onto the constraint structure, becomes the start
        x_admm = np.clip(admm.solve(lb, ub, x0=candidates[0]), lb, ub)
        snap = 1e-5
        near_lo = np.abs(x_admm - lb) <= snap
        near_up = np.abs(x_admm - ub) <= snap
        x_admm[near_lo] = lb[near_lo]
        x_admm[near_up & ~near_lo] = ub[near_up & ~near_lo]
        if refine is not None:
            x_admm = np.clip(refine(x_admm, lb, ub), lb, ub)
        row_seed_tol = 1e-4
        candidates.insert(0, x_admm)
    for cand in candidates:
        if engine.max_violation(cand) <= feas_tol:
            x0 = cand
            break
    if x0 is None:
        x0, guilty = _phase1(engine, candidates[0], feas_tol, max_iter)
        if x0 is None:
            return QpResult(status="infeasible", x=candidates[0],
                            objective=math.nan, iterations=0,
                            kkt_residual=math.nan, infeasible_rows=guilty)
        x0 = np.clip(x0, lb, ub)

    act_row, act_lo, act_up = _initial_sets(engine, x0, warm_start,
                                            row_tol=row_seed_tol)
    x, iters, kkt, eq_mult, row_mult, act_row, act_lo, act_up = engine.run(
        x0, act_row, act_lo, act_up)
    objective = engine.objective(x) + problem.objective_offset
    return QpResult(
        status="optimal", x=x, objective=objective, iterations=iters,
        kkt_residual=kkt,
        active_rows=np.flatnonzero(act_row),
        active_lo=np.flatnonzero(act_lo),
        active_up=np.flatnonzero(act_up),
        eq_multipliers=eq_mult, row_multipliers=row_mult)

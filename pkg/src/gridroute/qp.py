"""Dense convex QP solver with exact active sets and full dual recovery.

Problems have the form

    min  1/2 z'Pz + q'z   s.t.   A_eq z = b_eq,   A_in z <= b_in

with P symmetric positive semidefinite. The solver is a primal active-set
method: each iteration solves an equality-constrained subproblem on the
current working set (null-space method, least-squares backed so PSD-singular
reduced Hessians are fine) and adds/drops one constraint with Bland's rule,
which keeps the iteration deterministic and cycle-free. The binding pattern
at the optimum comes out exactly, which the sensitivity and critical-region
machinery downstream relies on.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import null_space

from .errors import DimensionMismatch


class QpStatus(enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    MAXITER = "MaxIter"


@dataclass(frozen=True)
class QpProblem:
    P: np.ndarray
    q: np.ndarray
    A_eq: np.ndarray
    b_eq: np.ndarray
    A_in: np.ndarray
    b_in: np.ndarray

    def __post_init__(self):
        n = len(self.q)
        P = np.asarray(self.P, dtype=float)
        scale = max(np.abs(P).max(), 1.0) if P.size else 1.0
        if P.shape != (n, n) or np.abs(P - P.T).max() > 1e-12 * scale:
            raise ValueError("P must be symmetric (1e-12 relative)")
        if P.size and np.linalg.eigvalsh(0.5 * (P + P.T)).min() < -1e-9 * scale:
            raise ValueError("P must be positive semidefinite")
        object.__setattr__(self, "P", 0.5 * (P + P.T))
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float))
        object.__setattr__(self, "A_eq", np.asarray(self.A_eq, dtype=float).reshape(-1, n))
        object.__setattr__(self, "b_eq", np.asarray(self.b_eq, dtype=float).reshape(-1))
        object.__setattr__(self, "A_in", np.asarray(self.A_in, dtype=float).reshape(-1, n))
        object.__setattr__(self, "b_in", np.asarray(self.b_in, dtype=float).reshape(-1))
        if self.A_eq.shape[0] != self.b_eq.shape[0] or self.A_in.shape[0] != self.b_in.shape[0]:
            raise DimensionMismatch("constraint matrix/vector row counts differ")

    @property
    def n(self) -> int:
        return len(self.q)

    def objective(self, z: np.ndarray) -> float:
        return float(0.5 * z @ self.P @ z + self.q @ z)


@dataclass(frozen=True)
class QpSolution:
    z: np.ndarray
    lambda_eq: np.ndarray
    mu_in: np.ndarray
    objective: float
    status: QpStatus
    active_set: frozenset[int] = field(default_factory=frozenset)
    iterations: int = 0


@dataclass(frozen=True)
class KktReport:
    stationarity_inf_norm: float
    primal_eq_inf_norm: float
    primal_in_violation: float
    comp_slack_inf_norm: float
    dual_feas_violation: float

    def max_residual(self) -> float:
        return max(
            self.stationarity_inf_norm,
            self.primal_eq_inf_norm,
            self.primal_in_violation,
            self.comp_slack_inf_norm,
            self.dual_feas_violation,
        )


BINDING_RTOL = 1e-7  # binding iff residual <= BINDING_RTOL * (1 + |b_i|)


def _eqp_solve(P, q, A, b, feas_tol):
    """Minimize over the affine set {Az = b}.

    Returns (kind, z, ray): kind 'ok' with the least-norm minimizer, 'ray'
    with a direction of unbounded descent (A ray = 0, P ray = 0), or
    'infeasible' when the equalities are inconsistent.
    """
    n = P.shape[0]
    if A.shape[0]:
        z0, *_ = np.linalg.lstsq(A, b, rcond=None)
        if A.shape[0] and np.abs(A @ z0 - b).max() > feas_tol:
            return "infeasible", None, None
        Z = null_space(A)
    else:
        z0 = np.zeros(n)
        Z = np.eye(n)
    if Z.size == 0:
        return "ok", z0, None
    H = Z.T @ P @ Z
    g = Z.T @ (P @ z0 + q)
    gscale = 1.0 + np.abs(g).max()
    y, *_ = np.linalg.lstsq(H, -g, rcond=None)
    if np.abs(H @ y + g).max() > 1e-9 * gscale:
        # The reduced gradient has a component in null(H): descend along it.
        w, s, _ = np.linalg.svd(H)
        null_mask = s <= 1e-12 * max(1.0, s[0]) if s.size else np.array([], dtype=bool)
        basis = w[:, null_mask] if null_mask.any() else w[:, -1:]
        ray = Z @ (basis @ (basis.T @ -g))
        nrm = np.linalg.norm(ray)
        if nrm > 0:
            return "ray", z0 + Z @ y, ray / nrm
    return "ok", z0 + Z @ y, None


def _multipliers(prob, z, working):
    """Least-norm multipliers of the stacked equality system at z."""
    A = np.vstack([prob.A_eq, prob.A_in[working]]) if (prob.A_eq.size or working) else np.zeros((0, prob.n))
    grad = prob.P @ z + prob.q
    if A.shape[0] == 0:
        return np.zeros(0), np.zeros(0)
    nu, *_ = np.linalg.lstsq(A.T, -grad, rcond=None)
    p = prob.A_eq.shape[0]
    return nu[:p], nu[p:]


def solve_qp(prob: QpProblem, tol: float = 1e-9, start_active=None, max_iter=None) -> QpSolution:
    """Solve the QP; deterministic for fixed inputs (Bland tie-breaking)."""
    n, m = prob.n, prob.A_in.shape[0]
    if max_iter is None:
        max_iter = 50 * (n + m + 2)
    b_scale = 1.0 + max(
        np.abs(prob.b_eq).max() if prob.b_eq.size else 0.0,
        np.abs(prob.b_in).max() if prob.b_in.size else 0.0,
    )
    feas_tol = tol * b_scale * 1e2 + 1e-12

    z = _phase1(prob, feas_tol)
    if z is None:
        return QpSolution(
            np.full(n, np.nan), np.zeros(prob.A_eq.shape[0]), np.zeros(m),
            np.nan, QpStatus.INFEASIBLE,
        )

    resid = prob.b_in - prob.A_in @ z if m else np.zeros(0)
    working = sorted(
        set(start_active or []) | {i for i in range(m) if resid[i] <= feas_tol}
    )
    working = _independent_subset(prob, working)

    for it in range(max_iter):
        A_w = np.vstack([prob.A_eq, prob.A_in[working]])
        b_w = np.concatenate([prob.b_eq, prob.b_in[working]])
        kind, z_new, ray = _eqp_solve(prob.P, prob.q, A_w, b_w, feas_tol)
        if kind == "infeasible":
            # Working set became inconsistent; drop its newest member.
            working = working[:-1] if working else working
            continue
        d = ray if kind == "ray" else z_new - z
        step_is_null = kind != "ray" and np.abs(d).max() <= tol * (1.0 + np.abs(z).max())
        if step_is_null:
            lam, mu_w = _multipliers(prob, z, working)
            grad = prob.P @ z + prob.q
            mu_tol = tol * (1.0 + np.abs(grad).max())
            if not len(mu_w) or mu_w.min() >= -mu_tol:
                return _finish(prob, z, working, it + 1)
            drop_pos = min(i for i in range(len(mu_w)) if mu_w[i] < -mu_tol)
            working.pop(drop_pos)
            continue
        # Longest feasible step toward z_new (or along the ray).
        t_cap = np.inf if kind == "ray" else 1.0
        t, blocker = t_cap, None
        if m:
            ad = prob.A_in @ d
            rem = prob.b_in - prob.A_in @ z
            for i in range(m):
                if i in working or ad[i] <= tol * (1.0 + np.abs(ad).max()):
                    continue
                ti = max(rem[i], 0.0) / ad[i]
                if ti < t - 1e-14:
                    t, blocker = ti, i
        if not np.isfinite(t):
            return QpSolution(
                z, np.zeros(prob.A_eq.shape[0]), np.zeros(m),
                -np.inf, QpStatus.UNBOUNDED,
            )
        z = z + t * d
        if blocker is not None:
            working = _independent_subset(prob, sorted(set(working) | {blocker}))
    lam, mu_w = _multipliers(prob, z, working)
    return _finish(prob, z, working, max_iter, status=QpStatus.MAXITER)


def _independent_subset(prob, working):
    """Keep a maximal linearly independent working set (lowest indices win)."""
    if not working:
        return []
    base = prob.A_eq
    kept: list[int] = []
    for i in working:
        cand = np.vstack([base, prob.A_in[kept + [i]]])
        if np.linalg.matrix_rank(cand, tol=1e-10 * max(1.0, np.abs(cand).max())) == cand.shape[0]:
            kept.append(i)
    return kept


def _phase1(prob, feas_tol):
    """Find a feasible point, or None. Equalities by least squares, then an
    auxiliary LP driving inequality violations to zero."""
    n, m = prob.n, prob.A_in.shape[0]
    if prob.A_eq.shape[0]:
        z0, *_ = np.linalg.lstsq(prob.A_eq, prob.b_eq, rcond=None)
        if np.abs(prob.A_eq @ z0 - prob.b_eq).max() > feas_tol:
            return None
    else:
        z0 = np.zeros(n)
    if m == 0:
        return z0
    viol = prob.A_in @ z0 - prob.b_in
    if viol.max() <= feas_tol:
        return z0
    # Auxiliary LP in (z, s): min 1's  s.t. A_eq z = b_eq, A_in z - s <= b_in, -s <= 0.
    s0 = np.maximum(viol, 0.0)
    P_aux = np.zeros((n + m, n + m))
    q_aux = np.concatenate([np.zeros(n), np.ones(m)])
    A_eq = np.hstack([prob.A_eq, np.zeros((prob.A_eq.shape[0], m))])
    A_in = np.vstack(
        [np.hstack([prob.A_in, -np.eye(m)]), np.hstack([np.zeros((m, n)), -np.eye(m)])]
    )
    b_in = np.concatenate([prob.b_in, np.zeros(m)])
    aux = QpProblem(P_aux, q_aux, A_eq, prob.b_eq, A_in, b_in)
    sol = _solve_from(aux, np.concatenate([z0, s0]), feas_tol)
    if sol is None or float(np.sum(sol[n:])) > feas_tol * (1 + m):
        return None
    return sol[:n]


def _solve_from(prob, z_start, feas_tol, max_iter=None):
    """Active-set loop from a known feasible point (used by phase 1)."""
    n, m = prob.n, prob.A_in.shape[0]
    if max_iter is None:
        max_iter = 50 * (n + m + 2)
    z = z_start
    resid = prob.b_in - prob.A_in @ z
    working = _independent_subset(prob, [i for i in range(m) if resid[i] <= feas_tol])
    tol = 1e-9
    for _ in range(max_iter):
        A_w = np.vstack([prob.A_eq, prob.A_in[working]])
        b_w = np.concatenate([prob.b_eq, prob.b_in[working]])
        kind, z_new, ray = _eqp_solve(prob.P, prob.q, A_w, b_w, feas_tol)
        if kind == "infeasible":
            working = working[:-1] if working else working
            continue
        d = ray if kind == "ray" else z_new - z
        if kind != "ray" and np.abs(d).max() <= tol * (1.0 + np.abs(z).max()):
            lam, mu_w = _multipliers(prob, z, working)
            grad = prob.P @ z + prob.q
            mu_tol = tol * (1.0 + np.abs(grad).max())
            if not len(mu_w) or mu_w.min() >= -mu_tol:
                return z
            working.pop(min(i for i in range(len(mu_w)) if mu_w[i] < -mu_tol))
            continue
        t_cap = np.inf if kind == "ray" else 1.0
        t, blocker = t_cap, None
        ad = prob.A_in @ d
        rem = prob.b_in - prob.A_in @ z
        for i in range(m):
            if i in working or ad[i] <= 1e-12 * (1.0 + np.abs(ad).max()):
                continue
            ti = max(rem[i], 0.0) / ad[i]
            if ti < t - 1e-14:
                t, blocker = ti, i
        if not np.isfinite(t):
            return None
        z = z + t * d
        if blocker is not None:
            working = _independent_subset(prob, sorted(set(working) | {blocker}))
    return z


def _finish(prob, z, working, iterations, status=QpStatus.OPTIMAL):
    lam, mu_w = _multipliers(prob, z, working)
    m = prob.A_in.shape[0]
    mu = np.zeros(m)
    for pos, i in enumerate(working):
        mu[i] = max(mu_w[pos], 0.0) if status is QpStatus.OPTIMAL else mu_w[pos]
    if m:
        resid = prob.b_in - prob.A_in @ z
        active = frozenset(
            i for i in range(m) if resid[i] <= BINDING_RTOL * (1.0 + abs(prob.b_in[i]))
        )
    else:
        active = frozenset()
    return QpSolution(z, lam, mu, prob.objective(z), status, active, iterations)


def verify_kkt(prob: QpProblem, sol: QpSolution) -> KktReport:
    """Exact KKT residual norms of a candidate primal-dual pair."""
    if sol.z.shape != (prob.n,):
        raise DimensionMismatch("solution dimension differs from problem")
    if sol.lambda_eq.shape[0] != prob.A_eq.shape[0] or sol.mu_in.shape[0] != prob.A_in.shape[0]:
        raise DimensionMismatch("multiplier dimensions differ from constraint counts")
    grad = prob.P @ sol.z + prob.q
    if prob.A_eq.size:
        grad = grad + prob.A_eq.T @ sol.lambda_eq
    if prob.A_in.size:
        grad = grad + prob.A_in.T @ sol.mu_in
    stat = np.abs(grad).max() if grad.size else 0.0
    eq = np.abs(prob.A_eq @ sol.z - prob.b_eq).max() if prob.A_eq.size else 0.0
    if prob.A_in.size:
        slack = prob.b_in - prob.A_in @ sol.z
        in_viol = max(0.0, float((-slack).max()))
        comp = np.abs(sol.mu_in * slack).max()
        dual = max(0.0, float((-sol.mu_in).max()))
    else:
        in_viol = comp = dual = 0.0
    return KktReport(float(stat), float(eq), in_viol, float(comp), float(dual))

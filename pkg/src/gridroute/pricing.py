"""Charging-price policies and BP mitigation.

Three adaptive system-optimal policies are computed by solving the social
optimum they induce (travel-cost optimum, dispatch optimum, combined), and
static route prices are analyzed through the critical-region machinery: on
a fixed constraint-binding pattern the equilibrium flows and LMPs are affine
in the price vector, every BP-elimination constraint is affine or concave
quadratic in it, and a feasible price (or an infeasibility certificate for
the region) falls out of a cutting-plane max-min-slack solve.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.stats import qmc

from .equilibrium import (
    ACTIVE_RTOL,
    BindingPattern,
    DispatchSolution,
    GueSolution,
    classify_pattern,
    economic_dispatch,
    solve_gue,
    transport_ue,
)
from .errors import DegeneratePattern, InvalidRange, SolverFailure
from .metrics import BpReport, Param, SensitivityRow, SocialCosts, _verdicts, social_costs
from .model import CoupledSystem, charging_load
from .qp import QpProblem, QpStatus, solve_qp


@dataclass(frozen=True)
class PricingPolicy:
    kind: str  # "lmp", "static", "opt_t", "opt_p", "opt_c"
    pi: np.ndarray | None = None

    @classmethod
    def lmp_pass_through(cls):
        return cls("lmp")

    @classmethod
    def static(cls, pi):
        pi = np.asarray(pi, dtype=float)
        if not np.all(np.isfinite(pi)):
            raise InvalidRange("static prices must be finite")
        return cls("static", pi)

    @classmethod
    def opt_t(cls):
        return cls("opt_t")

    @classmethod
    def opt_p(cls):
        return cls("opt_p")

    @classmethod
    def opt_c(cls):
        return cls("opt_c")


def _social_optimum_gue(sys: CoupledSystem, objective: str, tol: float) -> GueSolution:
    """GUE induced by an adaptive policy = minimizer of the matching cost.

    objective "t" optimizes travel cost alone (dispatch solved afterwards,
    and may be infeasible); "p" and "c" optimize over the joint feasible set.
    """
    t, pw, c = sys.transport, sys.power, sys.coupling
    n_r, n_p = t.n_routes, pw.n_buses
    groups = sys.od_groups()
    if objective == "t":
        P = 2 * t.route_quadratic()
        q = t.route_fixed_cost()
        A_eq = np.zeros((len(groups), n_r))
        b_eq = np.zeros(len(groups))
        for w, (routes, dem) in enumerate(groups):
            A_eq[w, list(routes)] = 1.0
            b_eq[w] = dem
        sol = solve_qp(QpProblem(P, q, A_eq, b_eq, -np.eye(n_r), np.zeros(n_r)), tol=tol)
        if sol.status is not QpStatus.OPTIMAL:
            raise SolverFailure(f"travel-optimum solve ended with {sol.status.value}")
        x = np.maximum(sol.z, 0.0)
        dispatch = economic_dispatch(pw, charging_load(sys, x), tol=tol)
        return _assemble(sys, x, dispatch, tol)

    n = n_r + 2 * n_p
    P = np.zeros((n, n))
    q = np.zeros(n)
    if objective == "c":
        P[:n_r, :n_r] = 2 * t.route_quadratic()
        q[:n_r] = t.route_fixed_cost()
    P[n_r : n_r + n_p, n_r : n_r + n_p] = np.diag(pw.q_diag)
    q[n_r : n_r + n_p] = pw.mu
    rows_eq = [np.hstack([c.rho * c.route_bus_matrix(), -np.eye(n_p), np.eye(n_p)])]
    rhs_eq = [-pw.base_load]
    inj = np.zeros(n)
    inj[n_r + n_p :] = 1.0
    rows_eq.append(inj[None, :])
    rhs_eq.append(np.zeros(1))
    for routes, dem in groups:
        row = np.zeros(n)
        row[list(routes)] = 1.0
        rows_eq.append(row[None, :])
        rhs_eq.append(np.array([dem]))
    fixed = np.flatnonzero(~pw.dispatchable)
    if fixed.size:
        sel = np.zeros((fixed.size, n))
        sel[np.arange(fixed.size), n_r + fixed] = 1.0
        rows_eq.append(sel)
        rhs_eq.append(np.zeros(fixed.size))
    A_in = [np.hstack([np.zeros((pw.n_flow_constraints, n_r + n_p)), pw.shift_factor])]
    b_in = [pw.f_cap]
    xblk = np.zeros((n_r, n))
    xblk[:, :n_r] = -np.eye(n_r)
    A_in.append(xblk)
    b_in.append(np.zeros(n_r))
    if pw.enforce_nonneg_gen:
        free = np.flatnonzero(pw.dispatchable)
        sel = np.zeros((free.size, n))
        sel[np.arange(free.size), n_r + free] = -1.0
        A_in.append(sel)
        b_in.append(np.zeros(free.size))
    prob = QpProblem(P, q, np.vstack(rows_eq), np.concatenate(rhs_eq),
                     np.vstack(A_in), np.concatenate(b_in))
    sol = solve_qp(prob, tol=tol)
    if sol.status is QpStatus.INFEASIBLE:
        from .errors import InfeasibleDispatch

        raise InfeasibleDispatch("social optimum has no feasible dispatch")
    if sol.status is not QpStatus.OPTIMAL:
        raise SolverFailure(f"social-optimum solve ended with {sol.status.value}")
    x = np.maximum(sol.z[:n_r], 0.0)
    dispatch = economic_dispatch(pw, charging_load(sys, x), tol=tol)
    return _assemble(sys, x, dispatch, tol)


def _assemble(sys: CoupledSystem, x, dispatch: DispatchSolution, tol,
              prices: np.ndarray | None = None) -> GueSolution:
    """Package a flow/dispatch pair as a GueSolution under given route prices."""
    travel = sys.transport.route_costs(x)
    pi = prices if prices is not None else sys.route_charge_prices(dispatch.lmp)
    total = travel + pi
    nu = []
    xi = np.zeros(sys.n_routes)
    demand = sum(d for _, d in sys.od_groups())
    for routes, dem in sys.od_groups():
        idx = list(routes)
        active = [r for r in idx if x[r] > ACTIVE_RTOL * max(demand, dem)]
        floor = float(total[active].min()) if active else float(total[idx].min())
        nu.append(floor)
        for r in idx:
            xi[r] = max(total[r] - floor, 0.0)
    binding = classify_pattern(sys, x, dispatch)
    return GueSolution(np.asarray(x, float), dispatch, tuple(nu), xi, total, binding)


def gue_under_policy(sys: CoupledSystem, policy: PricingPolicy, tol: float = 1e-9) -> GueSolution:
    """Equilibrium induced by a charging-price policy."""
    if policy.kind == "lmp":
        return solve_gue(sys, tol=tol)
    if policy.kind == "static":
        ue = transport_ue(sys.transport, policy.pi, sys.od_groups(), tol=tol)
        dispatch = economic_dispatch(sys.power, charging_load(sys, ue.x), tol=tol)
        return _assemble(sys, ue.x, dispatch, tol, prices=policy.pi)
    if policy.kind in ("opt_t", "opt_p", "opt_c"):
        return _social_optimum_gue(sys, policy.kind[-1], tol)
    raise InvalidRange(f"unknown policy kind '{policy.kind}'")


def policy_prices(sys: CoupledSystem, gue: GueSolution, policy: PricingPolicy) -> np.ndarray:
    """Route-level charging prices the policy charges at this equilibrium."""
    t = sys.transport
    congestion = t.route_quadratic() @ gue.x
    if policy.kind == "lmp":
        return sys.route_charge_prices(gue.dispatch.lmp)
    if policy.kind == "static":
        return policy.pi.copy()
    if policy.kind == "opt_t":
        return congestion
    if policy.kind == "opt_p":
        return sys.route_charge_prices(gue.dispatch.lmp) - congestion - t.route_fixed_cost()
    if policy.kind == "opt_c":
        return congestion + sys.route_charge_prices(gue.dispatch.lmp)
    raise InvalidRange(f"unknown policy kind '{policy.kind}'")


def screen_under_policy(sys: CoupledSystem, policy: PricingPolicy,
                        method: str = "fd") -> BpReport:
    """BP screening with the policy-induced equilibrium inside the loop.

    Static policies support the closed-form path (method "kkt"), where
    d(Phi_P)/d(alpha) = pi(lambda)' dx/d(alpha); adaptive policies are
    screened by finite differences.
    """
    solver = lambda s: gue_under_policy(s, policy)  # noqa: E731
    if policy.kind != "static" or method == "fd":
        from .metrics import screen_bp

        return screen_bp(sys, method="fd", solver=solver)
    gue = solver(sys)
    baseline = social_costs(sys, gue)
    region = critical_region(sys, policy.pi)
    t = sys.transport
    x = region.x_of(policy.pi)
    lam = region.lmp_of(policy.pi)
    pi_lam = sys.route_charge_prices(lam)
    grad_t = 2 * t.route_quadratic() @ x + t.route_fixed_cost()
    rows = []
    for l in range(t.n_links):
        a_l = t.link_route[l]
        dx = region.K @ a_l * float(a_l @ x)
        dphi_t = float(a_l @ x) ** 2 + float(grad_t @ dx)
        dphi_p = float(pi_lam @ dx)
        rows.append(SensitivityRow(Param("alpha", l), dphi_t, dphi_p, dphi_t + dphi_p, "kkt"))
    eta = gue.dispatch.eta
    for l in range(sys.power.n_flow_constraints):
        dphi_p = -float(eta[l])
        rows.append(SensitivityRow(Param("fbar", l), 0.0, dphi_p, dphi_p, "kkt"))
    return BpReport(tuple(rows), _verdicts(rows, baseline), baseline)


# ---------------------------------------------------------------------------
# Critical regions of the static-price parameterization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CriticalRegion:
    """Affine equilibrium maps on one constraint-binding pattern.

    Inside the region, x(pi) = K pi + v and lambda(pi) = C pi + w. The
    auxiliary maps (eta, injections, UE floor cost) make the region's own
    membership constraints affine in pi as well.
    """

    pattern: BindingPattern
    K: np.ndarray
    v: np.ndarray
    C: np.ndarray
    w: np.ndarray
    active_routes: tuple[int, ...]
    eta_map: np.ndarray   # eta(pi) = eta_map pi + eta_off
    eta_off: np.ndarray
    flow_map: np.ndarray  # Hp(pi) = flow_map pi + flow_off
    flow_off: np.ndarray
    nu_map: np.ndarray    # UE floor cost nu(pi) = nu_map pi + nu_off (per OD)
    nu_off: np.ndarray

    def x_of(self, pi: np.ndarray) -> np.ndarray:
        return self.K @ pi + self.v

    def lmp_of(self, pi: np.ndarray) -> np.ndarray:
        return self.C @ pi + self.w


def _dispatch_sensitivity(sys: CoupledSystem, dispatch: DispatchSolution,
                          binding_rows: list[int], zero_gens: list[int]):
    """Affine maps d -> (lambda, eta, Hp) of the reduced dispatch at a pattern."""
    pw = sys.power
    n = pw.n_buses
    P = np.diag(pw.q_diag)
    rows = [np.eye(n)]  # balance: g = d_total + p, eliminated via p = g - d
    # Assemble in (g, p) like the solver does so multipliers line up.
    P2 = np.zeros((2 * n, 2 * n))
    P2[:n, :n] = P
    blocks = [np.hstack([-np.eye(n), np.eye(n)])]
    rhs_const = [np.zeros(n)]  # -d goes here, handled as the variable part
    blocks.append(np.concatenate([np.zeros(n), np.ones(n)])[None, :])
    rhs_const.append(np.zeros(1))
    fixed = np.flatnonzero(~pw.dispatchable)
    for i in fixed:
        row = np.zeros(2 * n)
        row[i] = 1.0
        blocks.append(row[None, :])
        rhs_const.append(np.zeros(1))
    for l in binding_rows:
        row = np.zeros(2 * n)
        row[n:] = pw.shift_factor[l]
        blocks.append(row[None, :])
        rhs_const.append(np.array([pw.f_cap[l]]))
    for i in zero_gens:
        row = np.zeros(2 * n)
        row[i] = 1.0
        blocks.append(row[None, :])
        rhs_const.append(np.zeros(1))
    A = np.vstack(blocks)
    m = A.shape[0]
    Kmat = np.zeros((2 * n + m, 2 * n + m))
    Kmat[: 2 * n, : 2 * n] = P2
    Kmat[: 2 * n, 2 * n :] = A.T
    Kmat[2 * n :, : 2 * n] = A
    rhs0 = np.concatenate([np.concatenate([-pw.mu, np.zeros(n)]), np.concatenate(rhs_const)])
    if np.linalg.cond(Kmat) > 1e12:
        raise DegeneratePattern("reduced dispatch system singular at this pattern")
    base = np.linalg.solve(Kmat, rhs0)
    dd = np.zeros((2 * n + m, n))
    for i in range(n):
        r = np.zeros(2 * n + m)
        r[2 * n + i] = -1.0  # balance rhs is -d_total
        dd[:, i] = np.linalg.solve(Kmat, r)

    lam_rows = slice(2 * n, 3 * n)
    lam0 = base[lam_rows]
    dlam = dd[lam_rows, :]
    eta0 = np.zeros(pw.n_flow_constraints)
    deta = np.zeros((pw.n_flow_constraints, n))
    off = 3 * n + 1 + len(fixed)
    for j, l in enumerate(binding_rows):
        eta0[l] = base[off + j]
        deta[l] = dd[off + j, :]
    p_rows = slice(n, 2 * n)
    p0 = base[p_rows]
    dp = dd[p_rows, :]
    flow0 = pw.shift_factor @ p0
    dflow = pw.shift_factor @ dp
    return (lam0, dlam), (eta0, deta), (flow0, dflow)


def critical_region(sys: CoupledSystem, pi: np.ndarray, tol: float = 1e-9) -> CriticalRegion:
    """Binding pattern at static prices pi, with its affine K/v/C/w maps.

    Raises DEGENERATE_PATTERN when a constraint sits on the classification
    boundary (zero flow with zero reduced cost, binding line with zero dual,
    or duplicated active routes making the reduced UE singular).
    """
    pi = np.asarray(pi, dtype=float)
    t = sys.transport
    n_r = t.n_routes
    ue = transport_ue(t, pi, sys.od_groups(), tol=tol)
    dispatch = economic_dispatch(sys.power, charging_load(sys, ue.x), tol=tol)
    pattern = classify_pattern(sys, ue.x, dispatch)
    if pattern.degenerate:
        raise DegeneratePattern("binding pattern ambiguous at the given prices")
    active = sorted(set(range(n_r)) - pattern.zero_routes)
    for r in pattern.zero_routes:
        if ue.xi[r] <= tol * 1e3 * (1.0 + np.abs(ue.xi).max()):
            raise DegeneratePattern(f"route {r} has zero flow and zero reduced cost")

    groups = sys.od_groups()
    A_x = t.route_quadratic()
    G = A_x[np.ix_(active, active)]
    A_od = np.zeros((len(groups), len(active)))
    dems = np.zeros(len(groups))
    for wi, (routes, dem) in enumerate(groups):
        for j, r in enumerate(active):
            if r in routes:
                A_od[wi, j] = 1.0
        dems[wi] = dem
    B = np.zeros((len(active) + len(groups), len(active) + len(groups)))
    B[: len(active), : len(active)] = G
    B[: len(active), len(active) :] = A_od.T
    B[len(active) :, : len(active)] = A_od
    if np.linalg.cond(B) > 1e12:
        raise DegeneratePattern("reduced equilibrium system singular (duplicate active routes?)")
    B_inv = np.linalg.inv(B)
    beta_act = (t.route_fixed_cost())[active]
    rhs0 = np.concatenate([-(beta_act + pi[active]), dems])
    sol0 = B_inv @ rhs0
    # x_S(pi') = x_S(pi) + Kxx (pi'_S - pi_S) with Kxx = -B_inv[xx block].
    K = np.zeros((n_r, n_r))
    v = np.zeros(n_r)
    Kxx = -B_inv[: len(active), : len(active)]
    for j, r in enumerate(active):
        v[r] = sol0[j] - float(Kxx[j] @ pi[active])
        for j2, r2 in enumerate(active):
            K[r, r2] = Kxx[j, j2]
    # UE floor cost per OD pair: nu_w = -(demand-row multiplier), affine in pi.
    nu_rows = slice(len(active), len(active) + len(groups))
    nu_map = np.zeros((len(groups), n_r))
    nu_map[:, active] = B_inv[nu_rows, : len(active)]
    nu_off = -np.asarray(sol0[nu_rows]) - nu_map[:, active] @ pi[active]

    binding_rows = sorted(pattern.congested_lines)
    zero_gens = []
    if sys.power.enforce_nonneg_gen:
        scale = 1.0 + np.abs(dispatch.g).max()
        zero_gens = [
            int(i) for i in np.flatnonzero(sys.power.dispatchable)
            if abs(dispatch.g[i]) <= 1e-7 * scale
        ]
    (lam0, dlam), (eta0, deta), (flow0, dflow) = _dispatch_sensitivity(
        sys, dispatch, binding_rows, zero_gens
    )
    rb = sys.coupling.route_bus_matrix()
    rho = sys.coupling.rho
    d_of_pi = rho * rb @ K  # n_P x n_R
    d_off = sys.power.base_load + rho * rb @ v
    C = dlam @ d_of_pi
    w = lam0 + dlam @ d_off
    eta_map = deta @ d_of_pi
    eta_off = eta0 + deta @ d_off
    flow_map = dflow @ d_of_pi
    flow_off = flow0 + dflow @ d_off

    region = CriticalRegion(
        pattern, K, v, C, w, tuple(active),
        eta_map, eta_off, flow_map, flow_off, nu_map, nu_off,
    )
    _validate_region(sys, region, pi, tol)
    return region


def _validate_region(sys, region, pi, tol):
    """Check the affine maps against direct solves at pi and a perturbation."""
    rng = np.random.default_rng(7)
    scale = 1.0 + np.abs(pi).max()
    for probe in (pi, pi + rng.normal(0.0, 1e-4 * scale, size=pi.shape)):
        ue = transport_ue(sys.transport, probe, sys.od_groups(), tol=tol)
        dispatch = economic_dispatch(sys.power, charging_load(sys, ue.x), tol=tol)
        if classify_pattern(sys, ue.x, dispatch).key() != region.pattern.key():
            if np.array_equal(probe, pi):
                raise DegeneratePattern("pattern not reproducible at the region's own prices")
            continue  # perturbation fell outside; membership check not applicable
        x_err = np.abs(region.x_of(probe) - ue.x).max()
        l_err = np.abs(region.lmp_of(probe) - dispatch.lmp).max()
        if x_err > 1e-6 * (1.0 + np.abs(ue.x).max()) or l_err > 1e-6 * (
            1.0 + np.abs(dispatch.lmp).max()
        ):
            raise DegeneratePattern(
                f"affine maps disagree with direct solves (x err {x_err:.2e}, lmp err {l_err:.2e})"
            )


# ---------------------------------------------------------------------------
# BP elimination within one region
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MitigationResult:
    status: str  # "found", "infeasible_in_region", "indeterminate"
    pi: np.ndarray | None
    revenue: float
    constraint_slacks: tuple[tuple[str, float], ...]
    certificate: float  # upper bound on the max-min slack at termination


def _constraints(sys: CoupledSystem, region: CriticalRegion, theta: float, lo, hi):
    """(name, value fn, gradient fn) for every constraint, slacks >= 0."""
    t = sys.transport
    rho = sys.coupling.rho
    rb = sys.coupling.route_bus_matrix()
    K, v, C, w = region.K, region.v, region.C, region.w
    A_x = t.route_quadratic()
    beta_r = t.route_fixed_cost()
    cons = []

    for l in range(t.n_links):
        a_l = t.link_route[l]
        ka = K @ a_l

        def dphi_t(pi, a_l=a_l, ka=ka):
            x = K @ pi + v
            u = float(a_l @ x)
            m = float((2 * A_x @ x + beta_r) @ ka)
            return u * u + m * u

        def dphi_t_grad(pi, a_l=a_l, ka=ka):
            x = K @ pi + v
            u = float(a_l @ x)
            m = float((2 * A_x @ x + beta_r) @ ka)
            grad_u = K.T @ a_l
            grad_m = 2 * K.T @ (A_x @ ka)
            return (2 * u + m) * grad_u + u * grad_m

        cons.append((f"dphi_t/dalpha:{l}", dphi_t, dphi_t_grad))

        def dphi_p(pi, a_l=a_l, ka=ka):
            x = K @ pi + v
            lam = C @ pi + w
            u = float(a_l @ x)
            return float((rho * rb.T @ lam) @ ka) * u

        def dphi_p_grad(pi, a_l=a_l, ka=ka):
            x = K @ pi + v
            lam = C @ pi + w
            u = float(a_l @ x)
            s = float((rho * rb.T @ lam) @ ka)
            return s * (K.T @ a_l) + u * (rho * C.T @ (rb @ ka))

        cons.append((f"dphi_p/dalpha:{l}", dphi_p, dphi_p_grad))

    if np.isfinite(theta):
        def revenue(pi):
            return float(pi @ (K @ pi + v)) - theta

        def revenue_grad(pi):
            return (K + K.T) @ pi + v

        cons.append(("revenue", revenue, revenue_grad))

    n_r = t.n_routes
    for r in region.active_routes:
        cons.append((
            f"x:{r}",
            lambda pi, r=r: float(K[r] @ pi + v[r]),
            lambda pi, r=r: K[r].copy(),
        ))
    zero = sorted(region.pattern.zero_routes)
    groups = sys.od_groups()
    od_of_route = {}
    for wi, (routes, _) in enumerate(groups):
        for r in routes:
            od_of_route[r] = wi
    for r in zero:
        wi = od_of_route[r]

        def xi_val(pi, r=r, wi=wi):
            x = K @ pi + v
            cost = float(A_x[r] @ x + beta_r[r] + pi[r])
            floor = float(region.nu_map[wi] @ pi + region.nu_off[wi])
            return cost - floor

        def xi_grad(pi, r=r, wi=wi):
            g = K.T @ A_x[r]
            g = g.copy()
            g[r] += 1.0
            return g - region.nu_map[wi]

        cons.append((f"xi:{r}", xi_val, xi_grad))
    for l in range(sys.power.n_flow_constraints):
        if l in region.pattern.congested_lines:
            cons.append((
                f"eta:{l}",
                lambda pi, l=l: float(region.eta_map[l] @ pi + region.eta_off[l]),
                lambda pi, l=l: region.eta_map[l].copy(),
            ))
        else:
            cons.append((
                f"line:{l}",
                lambda pi, l=l: float(sys.power.f_cap[l] - region.flow_map[l] @ pi - region.flow_off[l]),
                lambda pi, l=l: -region.flow_map[l],
            ))
    lo_v = np.full(n_r, lo, dtype=float) if np.isscalar(lo) else np.asarray(lo, float)
    hi_v = np.full(n_r, hi, dtype=float) if np.isscalar(hi) else np.asarray(hi, float)
    for r in range(n_r):
        cons.append((f"box_lo:{r}", lambda pi, r=r: float(pi[r] - lo_v[r]),
                     lambda pi, r=r: np.eye(n_r)[r]))
        cons.append((f"box_hi:{r}", lambda pi, r=r: float(hi_v[r] - pi[r]),
                     lambda pi, r=r: -np.eye(n_r)[r]))
    return cons


def eliminate_bp_static(sys: CoupledSystem, region: CriticalRegion,
                        revenue_floor: float, pi_bounds: tuple,
                        pi_start: np.ndarray | None = None,
                        max_rounds: int = 60, tol: float = 1e-7) -> MitigationResult:
    """Search the region for prices eliminating both TBP types.

    Maximizes the minimum (scaled) constraint slack by cutting planes: every
    slack is concave in pi, so linearizations at visited points over-estimate
    it and the LP value upper-bounds the true max-min. Termination yields a
    feasible price or an in-region infeasibility certificate.
    """
    lo, hi = pi_bounds
    n_r = sys.n_routes
    cons = _constraints(sys, region, revenue_floor, lo, hi)
    pi0 = pi_start if pi_start is not None else np.full(
        n_r, (np.mean(lo) + np.mean(hi)) / 2.0
    )
    scales = np.array([1.0 + abs(fn(pi0)) for _, fn, _ in cons])

    def min_slack(pi):
        vals = np.array([fn(pi) for _, fn, _ in cons]) / scales
        return float(vals.min()), vals

    def true_feasible(pi):
        vals = np.array([fn(pi) for _, fn, _ in cons])
        return bool(np.all(vals >= -tol * scales)), vals

    pts = [pi0]
    best_pi, best_val = pi0, min_slack(pi0)[0]
    ub = np.inf
    for _ in range(max_rounds):
        ok, vals = true_feasible(best_pi)
        if ok:
            return MitigationResult(
                "found", best_pi, float(best_pi @ (region.K @ best_pi + region.v)),
                tuple((name, float(val)) for (name, _, _), val in zip(cons, vals)),
                float(ub if np.isfinite(ub) else best_val),
            )
        # LP over all accumulated cuts: max t s.t. t <= s_i(p_j) + g_ij'(p - p_j).
        rows = []
        rhs = []
        for p in pts:
            for (name, fn, gr), sc in zip(cons, scales):
                g = gr(p) / sc
                rows.append(np.concatenate([-g, [1.0]]))
                rhs.append(fn(p) / sc - float(g @ p))
        lo_v = np.full(n_r, lo, dtype=float) if np.isscalar(lo) else np.asarray(lo, float)
        hi_v = np.full(n_r, hi, dtype=float) if np.isscalar(hi) else np.asarray(hi, float)
        box = np.hstack([np.eye(n_r), np.zeros((n_r, 1))])
        rows = np.vstack([np.vstack(rows), -box, box])
        rhs = np.concatenate([np.array(rhs), -lo_v, hi_v])
        q = np.zeros(n_r + 1)
        q[-1] = -1.0
        P = np.eye(n_r + 1) * 1e-9  # proximal ridge keeps LP iterates stable
        sol = solve_qp(QpProblem(P, q, np.zeros((0, n_r + 1)), np.zeros(0), rows, rhs))
        if sol.status is not QpStatus.OPTIMAL:
            break
        pi_new, t_new = sol.z[:n_r], float(sol.z[-1])
        ub = min(ub, t_new)
        val, _ = min_slack(pi_new)
        if val > best_val:
            best_val, best_pi = val, pi_new
        pts.append(pi_new)
        if ub < -tol:
            return MitigationResult("infeasible_in_region", None, np.nan, (), float(ub))
        if ub - best_val <= tol:
            break
    ok, vals = true_feasible(best_pi)
    if ok:
        return MitigationResult(
            "found", best_pi, float(best_pi @ (region.K @ best_pi + region.v)),
            tuple((name, float(val)) for (name, _, _), val in zip(cons, vals)), float(ub),
        )
    if ub < -tol:
        return MitigationResult("infeasible_in_region", None, np.nan, (), float(ub))
    return MitigationResult("indeterminate", best_pi, np.nan, (), float(ub))


@dataclass(frozen=True)
class RegionWalkResult:
    entries: tuple[tuple[CriticalRegion, MitigationResult], ...]
    status: str  # "found" or "indeterminate"
    regions_visited: int
    samples_drawn: int


def region_walk(sys: CoupledSystem, pi_bounds: tuple, budget: int,
                revenue_floor: float = -np.inf, seed: int = 0) -> RegionWalkResult:
    """Probe critical regions from a low-discrepancy price sample.

    Deduplicates samples by binding pattern, runs the elimination program
    once per new region, and stops at the first feasible price. Sampling is
    not exhaustive, so a fully negative walk ends 'indeterminate'.
    """
    if budget < 1:
        raise InvalidRange("budget must be at least 1")
    lo, hi = pi_bounds
    n_r = sys.n_routes
    lo_v = np.full(n_r, lo, dtype=float) if np.isscalar(lo) else np.asarray(lo, float)
    hi_v = np.full(n_r, hi, dtype=float) if np.isscalar(hi) else np.asarray(hi, float)
    sampler = qmc.Halton(d=n_r, scramble=False, seed=seed)
    samples = lo_v + sampler.random(budget) * (hi_v - lo_v)
    seen: set = set()
    entries = []
    for pi in samples:
        try:
            region = critical_region(sys, pi)
        except DegeneratePattern:
            continue
        key = region.pattern.key()
        if key in seen:
            continue
        seen.add(key)
        result = eliminate_bp_static(sys, region, revenue_floor, (lo_v, hi_v), pi_start=pi)
        entries.append((region, result))
        if result.status == "found":
            return RegionWalkResult(tuple(entries), "found", len(seen), budget)
    return RegionWalkResult(tuple(entries), "indeterminate", len(seen), budget)

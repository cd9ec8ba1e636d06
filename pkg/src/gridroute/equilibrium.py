"""Economic dispatch, transportation user equilibrium, and the joint GUE solve.

The generalized user equilibrium of a coupled system is computed in a single
convex QP over (x, g, p); no best-response iteration is ever needed because
the equilibrium conditions are exactly the KKT system of that program. The
dispatch is then re-solved at the equilibrium flows to populate the power-side
duals, and the traveler-side fixed point is asserted.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleDispatch, SolverFailure
from .model import CoupledSystem, PowerNetwork, TransportationNetwork, charging_load
from .qp import BINDING_RTOL, QpProblem, QpStatus, solve_qp

DEFAULT_TOL = 1e-9
ACTIVE_RTOL = 1e-7  # x_r active iff x_r > ACTIVE_RTOL * demand


@dataclass(frozen=True)
class DispatchSolution:
    g: np.ndarray
    p: np.ndarray
    lmp: np.ndarray
    gamma: float
    eta: np.ndarray
    cost: float


@dataclass(frozen=True)
class BindingPattern:
    zero_routes: frozenset[int]
    congested_lines: frozenset[int]
    degenerate: bool = False

    def key(self) -> tuple:
        return (tuple(sorted(self.zero_routes)), tuple(sorted(self.congested_lines)))


@dataclass(frozen=True)
class TransportUe:
    x: np.ndarray
    nu: tuple[float, ...]
    xi: np.ndarray


@dataclass(frozen=True)
class GueSolution:
    x: np.ndarray
    dispatch: DispatchSolution
    nu: tuple[float, ...]
    xi: np.ndarray
    route_cost: np.ndarray
    binding: BindingPattern
    warnings: tuple[str, ...] = ()


def _dispatch_problem(power: PowerNetwork, d_total: np.ndarray):
    n = power.n_buses
    P = np.zeros((2 * n, 2 * n))
    P[:n, :n] = np.diag(power.q_diag)
    q = np.concatenate([power.mu, np.zeros(n)])
    # Bus balance rho-loads + base + p = g, one multiplier per bus (the LMP).
    bal = np.hstack([-np.eye(n), np.eye(n)])
    rows_eq = [bal]
    rhs_eq = [-d_total]
    rows_eq.append(np.concatenate([np.zeros(n), np.ones(n)])[None, :])
    rhs_eq.append(np.zeros(1))
    fixed = ~power.dispatchable
    if fixed.any():
        sel = np.zeros((fixed.sum(), 2 * n))
        sel[np.arange(fixed.sum()), np.flatnonzero(fixed)] = 1.0
        rows_eq.append(sel)
        rhs_eq.append(np.zeros(fixed.sum()))
    A_in = [np.hstack([np.zeros_like(power.shift_factor), power.shift_factor])]
    b_in = [power.f_cap]
    if power.enforce_nonneg_gen:
        free = np.flatnonzero(power.dispatchable)
        sel = np.zeros((free.size, 2 * n))
        sel[np.arange(free.size), free] = -1.0
        A_in.append(sel)
        b_in.append(np.zeros(free.size))
    return QpProblem(
        P, q, np.vstack(rows_eq), np.concatenate(rhs_eq), np.vstack(A_in), np.concatenate(b_in)
    )


def economic_dispatch(power: PowerNetwork, d: np.ndarray, tol: float = DEFAULT_TOL) -> DispatchSolution:
    """Optimal generation serving charging load d on top of the base load.

    Returns the primal dispatch together with the LMP vector (balance duals),
    the system multiplier gamma, and the line-limit duals eta.
    """
    d = np.asarray(d, dtype=float)
    d_total = d + power.base_load
    prob = _dispatch_problem(power, d_total)
    sol = solve_qp(prob, tol=tol)
    if sol.status is QpStatus.INFEASIBLE:
        raise InfeasibleDispatch("load cannot be served under the line limits")
    if sol.status is not QpStatus.OPTIMAL:
        raise SolverFailure(f"dispatch solve ended with status {sol.status.value}")
    n = power.n_buses
    g, p = sol.z[:n], sol.z[n:]
    lmp = sol.lambda_eq[:n]
    gamma = float(sol.lambda_eq[n])
    eta = sol.mu_in[: power.n_flow_constraints]
    return DispatchSolution(g, p, lmp, gamma, eta, prob.objective(sol.z))


def transport_ue(
    transport: TransportationNetwork,
    route_prices: np.ndarray,
    demand: float | list[tuple[tuple[int, ...], float]] = 1.0,
    tol: float = DEFAULT_TOL,
) -> TransportUe:
    """Wardrop equilibrium given fixed per-route charging prices.

    demand may be a scalar (single O-D pair over all routes) or a list of
    (route indices, demand) groups.
    """
    n_r = transport.n_routes
    prices = np.asarray(route_prices, dtype=float)
    groups = demand if isinstance(demand, list) else [(tuple(range(n_r)), float(demand))]
    P = transport.route_quadratic()
    q = transport.route_fixed_cost() + prices
    A_eq = np.zeros((len(groups), n_r))
    b_eq = np.zeros(len(groups))
    for w, (routes, dem) in enumerate(groups):
        A_eq[w, list(routes)] = 1.0
        b_eq[w] = dem
    sol = solve_qp(QpProblem(P, q, A_eq, b_eq, -np.eye(n_r), np.zeros(n_r)), tol=tol)
    if sol.status is not QpStatus.OPTIMAL:
        raise SolverFailure(f"UE solve ended with status {sol.status.value}")
    return TransportUe(sol.z, tuple(-sol.lambda_eq), sol.mu_in)


def _gue_problem(sys: CoupledSystem):
    t, p, c = sys.transport, sys.power, sys.coupling
    n_r, n_p = t.n_routes, p.n_buses
    n = n_r + 2 * n_p
    P = np.zeros((n, n))
    P[:n_r, :n_r] = t.route_quadratic()
    P[n_r : n_r + n_p, n_r : n_r + n_p] = np.diag(p.q_diag)
    q = np.concatenate([t.route_fixed_cost(), p.mu, np.zeros(n_p)])
    rb = c.route_bus_matrix()  # n_p x n_r
    bal = np.hstack([c.rho * rb, -np.eye(n_p), np.eye(n_p)])
    rows_eq = [bal]
    rhs_eq = [-p.base_load]
    inj_sum = np.zeros(n)
    inj_sum[n_r + n_p :] = 1.0
    rows_eq.append(inj_sum[None, :])
    rhs_eq.append(np.zeros(1))
    groups = sys.od_groups()
    for routes, dem in groups:
        row = np.zeros(n)
        row[list(routes)] = 1.0
        rows_eq.append(row[None, :])
        rhs_eq.append(np.array([dem]))
    fixed = ~p.dispatchable
    if fixed.any():
        sel = np.zeros((fixed.sum(), n))
        sel[np.arange(fixed.sum()), n_r + np.flatnonzero(fixed)] = 1.0
        rows_eq.append(sel)
        rhs_eq.append(np.zeros(fixed.sum()))
    A_in = [np.hstack([np.zeros((p.n_flow_constraints, n_r + n_p)), p.shift_factor])]
    b_in = [p.f_cap]
    x_block = np.zeros((n_r, n))
    x_block[:, :n_r] = -np.eye(n_r)
    A_in.append(x_block)
    b_in.append(np.zeros(n_r))
    if p.enforce_nonneg_gen:
        free = np.flatnonzero(p.dispatchable)
        sel = np.zeros((free.size, n))
        sel[np.arange(free.size), n_r + free] = -1.0
        A_in.append(sel)
        b_in.append(np.zeros(free.size))
    prob = QpProblem(
        P, q, np.vstack(rows_eq), np.concatenate(rhs_eq), np.vstack(A_in), np.concatenate(b_in)
    )
    return prob, len(groups)


def classify_pattern(sys: CoupledSystem, x: np.ndarray, dispatch: DispatchSolution) -> BindingPattern:
    """Binding pattern (zero routes, congested lines) with a degeneracy flag.

    A pattern is degenerate when a constraint is binding with essentially
    zero multiplier or sits in the ambiguity band around the binding
    tolerance; the sensitivity machinery refuses to differentiate there.
    """
    power = sys.power
    demand = sum(d for _, d in sys.od_groups())
    flows = power.shift_factor @ dispatch.p
    line_resid = power.f_cap - flows
    line_tol = BINDING_RTOL * (1.0 + np.abs(power.f_cap))
    congested = frozenset(np.flatnonzero(line_resid <= line_tol).tolist())
    zero = frozenset(np.flatnonzero(x <= ACTIVE_RTOL * demand).tolist())
    degenerate = False
    lam_scale = 1.0 + np.abs(dispatch.lmp).max()
    for l in range(power.n_flow_constraints):
        if l in congested and dispatch.eta[l] <= BINDING_RTOL * lam_scale:
            degenerate = True
        if l not in congested and line_resid[l] <= 10 * line_tol[l]:
            degenerate = True
    for r in range(sys.n_routes):
        if r not in zero and x[r] <= 10 * ACTIVE_RTOL * demand:
            degenerate = True
    return BindingPattern(zero, congested, degenerate)


def solve_gue(sys: CoupledSystem, tol: float = DEFAULT_TOL) -> GueSolution:
    """Generalized user equilibrium of the coupled system via the joint QP."""
    prob, n_groups = _gue_problem(sys)
    sol = solve_qp(prob, tol=tol)
    if sol.status is QpStatus.INFEASIBLE:
        raise InfeasibleDispatch("no feasible dispatch for any admissible travel pattern")
    if sol.status is not QpStatus.OPTIMAL:
        raise SolverFailure(f"GUE solve ended with status {sol.status.value}")
    n_r, n_p = sys.n_routes, sys.n_buses
    x = np.maximum(sol.z[:n_r], 0.0)
    warnings: list[str] = []
    if np.any(sys.transport.alpha == 0) or np.any(
        (sys.power.q_diag == 0) & sys.power.dispatchable
    ):
        warnings.append("NONUNIQUE_WARNING")

    dispatch = economic_dispatch(sys.power, charging_load(sys, x), tol=tol)
    nu = tuple(-sol.lambda_eq[n_p + 1 : n_p + 1 + n_groups])
    xi = sol.mu_in[sys.power.n_flow_constraints : sys.power.n_flow_constraints + n_r]
    prices = sys.route_charge_prices(dispatch.lmp)
    route_cost = sys.transport.route_costs(x) + prices

    # Fixed point: active routes of each O-D pair share the minimum cost.
    cost_tol = 1e-6 * (1.0 + np.abs(route_cost).max())
    demand_total = sum(d for _, d in sys.od_groups())
    for routes, dem in sys.od_groups():
        idx = [r for r in routes if x[r] > ACTIVE_RTOL * max(demand_total, dem)]
        if not idx:
            continue
        spread = route_cost[idx].max() - min(route_cost[list(routes)])
        if spread > 10 * cost_tol:
            warnings.append("FIXED_POINT_RESIDUAL")
        if route_cost[idx].min() <= cost_tol and min(sys.transport.route_costs(x)[idx]) <= 0:
            warnings.append("ZERO_COST_ACTIVE_ROUTE")
    binding = classify_pattern(sys, x, dispatch)
    return GueSolution(x, dispatch, nu, xi, route_cost, binding, tuple(dict.fromkeys(warnings)))


def solve_gue_multi_od(sys: CoupledSystem, od_demands=None, tol: float = DEFAULT_TOL) -> GueSolution:
    """GUE with several origin-destination pairs (route groups with demands)."""
    if od_demands is not None:
        sys = CoupledSystem(
            sys.transport, sys.power, sys.coupling,
            tuple((tuple(r), float(d)) for r, d in od_demands),
        )
    return solve_gue(sys, tol=tol)


def congestion_pattern(sys: CoupledSystem, gue: GueSolution) -> BindingPattern:
    return classify_pattern(sys, gue.x, gue.dispatch)


def social_cost_values(sys: CoupledSystem, gue: GueSolution) -> tuple[float, float, float]:
    """(Phi_T, Phi_P, Phi_C) at the equilibrium; travel cost excludes charging."""
    phi_t = float(gue.x @ sys.transport.route_costs(gue.x))
    phi_p = gue.dispatch.cost
    return phi_t, phi_p, phi_t + phi_p


def gue_to_dict(sys: CoupledSystem, gue: GueSolution) -> dict:
    phi_t, phi_p, phi_c = social_cost_values(sys, gue)
    return {
        "x": gue.x.tolist(),
        "g": gue.dispatch.g.tolist(),
        "p": gue.dispatch.p.tolist(),
        "lambda": gue.dispatch.lmp.tolist(),
        "eta": gue.dispatch.eta.tolist(),
        "nu": gue.nu[0] if len(gue.nu) == 1 else list(gue.nu),
        "phi_t": phi_t,
        "phi_p": phi_p,
        "phi_c": phi_c,
        "congested_lines": sorted(gue.binding.congested_lines),
        "zero_routes": sorted(gue.binding.zero_routes),
    }

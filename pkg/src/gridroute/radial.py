"""Radial-network reduction and derivative-free BP verdicts.

On a tree power network, congested lines split the buses into subnetworks
sharing one LMP each; active routes group into bundles sharing one travel
cost each. Aggregating bundles to routes and subnetworks to buses yields a
K-dimensional linear system whose closed-form sensitivities decide every BP
type by a sign test, no re-solving needed. These verdicts are exact inside a
critical region and are cross-checked against the numeric derivatives in the
test suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .equilibrium import ACTIVE_RTOL, GueSolution, transport_ue
from .errors import Degeneracy, NotRadial, PreconditionFailed, SingularAggregation
from .model import CoupledSystem, PowerNetwork

LMP_RTOL = 1e-6
COST_RTOL = 1e-6


# ---------------------------------------------------------------------------
# Tree structure recovery from shift-factor rows
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LineInfo:
    """One physical line of a radial network.

    hi_side is the set of buses whose injections the +direction row meters;
    rows maps each H row index of this line to +1 (same orientation as
    hi_side -> rest) or -1 (reverse).
    """

    hi_side: frozenset[int]
    rows: dict[int, int]
    endpoints: tuple[int, int]  # (bus in hi_side, bus outside), adjacent pair


def _row_cut(h_row: np.ndarray):
    """Interpret a shift-factor row as a tree cut, or return None."""
    vals = np.sort(np.unique(np.round(h_row, 9)))
    if len(vals) != 2 or abs((vals[1] - vals[0]) - 1.0) > 1e-6:
        return None
    hi = frozenset(np.flatnonzero(h_row > (vals[0] + vals[1]) / 2).tolist())
    return hi


def power_lines(power: PowerNetwork) -> list[LineInfo]:
    """Recover the physical lines of a radial network from H.

    Raises NOT_RADIAL when the rows are not tree cuts or do not assemble
    into a spanning tree.
    """
    n = power.n_buses
    cuts: dict[frozenset, dict[int, int]] = {}
    for l in range(power.n_flow_constraints):
        hi = _row_cut(power.shift_factor[l])
        if hi is None:
            raise NotRadial(f"flow constraint {l} is not a tree cut; network is meshed")
        lo = frozenset(range(n)) - hi
        canon, sign = (hi, 1) if min(hi) < min(lo) else (lo, -1)
        cuts.setdefault(canon, {})[l] = sign
    if len(cuts) != n - 1:
        raise NotRadial(f"{len(cuts)} distinct cuts for {n} buses; expected {n - 1}")

    cut_list = list(cuts.items())
    sep = np.zeros((n, n), dtype=int)
    for canon, _ in cut_list:
        inside = np.zeros(n, dtype=bool)
        inside[list(canon)] = True
        sep += np.not_equal.outer(inside, inside)
    lines: list[LineInfo] = []
    for canon, rows in cut_list:
        pair = None
        for u in sorted(canon):
            for v in sorted(set(range(n)) - canon):
                if sep[u, v] == 1:
                    pair = (u, v)
                    break
            if pair:
                break
        if pair is None:
            raise NotRadial("cuts do not assemble into a tree")
        lines.append(LineInfo(canon, rows, pair))
    # Connectivity: a spanning tree on n buses has n-1 edges joining all buses.
    seen = {0}
    frontier = [0]
    adj = {u: set() for u in range(n)}
    for ln in lines:
        u, v = ln.endpoints
        adj[u].add(v)
        adj[v].add(u)
    while frontier:
        u = frontier.pop()
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                frontier.append(v)
    if len(seen) != n:
        raise NotRadial("line graph is a forest, not a spanning tree")
    return lines


def assert_radial(power: PowerNetwork) -> None:
    """Raise NOT_RADIAL unless the line graph is a tree on the buses."""
    power_lines(power)


# ---------------------------------------------------------------------------
# Subnetworks and route bundles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Subnetwork:
    buses: frozenset[int]
    internal_lines: frozenset[int]  # H row indices of uncongested member lines
    lmp: float


@dataclass(frozen=True)
class RouteBundle:
    routes: tuple[int, ...]
    aggregate_flow: float
    common_cost: float


@dataclass(frozen=True)
class TieLine:
    """A congested line between subnetworks, oriented by realized flow."""

    binding_row: int
    from_bus: int
    to_bus: int
    from_subnet: int | None  # index into the kept (nonempty-bundle) subnets
    to_subnet: int | None
    capacity: float


def _congested_lines(sys: CoupledSystem, gue: GueSolution, lines: list[LineInfo]):
    """(line, binding_row, oriented (i, i')) for each congested physical line."""
    out = []
    for ln in lines:
        rows = [l for l in ln.rows if l in gue.binding.congested_lines]
        if not rows:
            continue
        if len(rows) > 1:
            raise Degeneracy("both directions of one line binding simultaneously")
        row = rows[0]
        u, v = ln.endpoints
        i, ip = (u, v) if ln.rows[row] > 0 else (v, u)
        out.append((ln, row, (i, ip)))
    return out


def partition_subnetworks(sys: CoupledSystem, gue: GueSolution) -> list[Subnetwork]:
    """Connected components after deleting congested lines; equal-LMP checked."""
    lines = power_lines(sys.power)
    congested = _congested_lines(sys, gue, lines)
    congested_cuts = [ln.hi_side for ln, _, _ in congested]
    n = sys.power.n_buses
    signatures = {}
    for bus in range(n):
        signatures.setdefault(tuple(bus in cut for cut in congested_cuts), []).append(bus)
    lmp = gue.dispatch.lmp
    lmp_tol = LMP_RTOL * (1.0 + np.abs(lmp).max())
    subnets = []
    for _, buses in sorted(signatures.items(), key=lambda kv: kv[1][0]):
        values = lmp[buses]
        if values.max() - values.min() > lmp_tol:
            raise Degeneracy(
                f"LMP spread {values.max() - values.min():.3e} inside an uncongested component"
            )
        internal = frozenset(
            row
            for ln in lines
            if ln.hi_side not in congested_cuts
            for row in ln.rows
            if ln.hi_side & set(buses) and (set(buses) - ln.hi_side)
        )
        subnets.append(Subnetwork(frozenset(buses), internal, float(values.mean())))
    return subnets


def route_bundles(sys: CoupledSystem, gue: GueSolution, subnets: list[Subnetwork]) -> list[RouteBundle | None]:
    """Active routes grouped by the subnetwork of their charger's bus.

    Entry k is None when subnetwork k has no active route (empty bundle).
    """
    demand = sum(d for _, d in sys.od_groups())
    bus_of = sys.bus_of_route()
    costs = sys.transport.route_costs(gue.x)
    cost_tol = COST_RTOL * (1.0 + np.abs(costs).max())
    bundles: list[RouteBundle | None] = []
    for sub in subnets:
        routes = tuple(
            r for r in range(sys.n_routes)
            if gue.x[r] > ACTIVE_RTOL * demand and bus_of[r] in sub.buses
        )
        if not routes:
            bundles.append(None)
            continue
        spread = costs[list(routes)].max() - costs[list(routes)].min()
        if spread > cost_tol:
            raise Degeneracy(f"travel-cost spread {spread:.3e} inside one route bundle")
        bundles.append(RouteBundle(routes, float(gue.x[list(routes)].sum()),
                                   float(costs[list(routes)].mean())))
    return bundles


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AggregatedSystem:
    K: int
    alpha_hat: np.ndarray       # K x K
    beta_hat: np.ndarray        # K
    q_hat: np.ndarray           # K
    mu_hat: np.ndarray          # K
    s_hat: np.ndarray           # K x m' signed tie-line selection
    f_hat: np.ndarray           # K, net outflow S fbar
    gamma: np.ndarray           # K x K, alpha_hat + rho^2 diag(q_hat)
    b_ul_inv: np.ndarray        # K x K
    c_hat: np.ndarray           # R x K, x_active = c_hat x_hat + q_vec
    q_vec: np.ndarray           # R
    x_hat: np.ndarray           # K
    lmp_hat: np.ndarray         # K
    d0_hat: np.ndarray          # K, base load per subnetwork
    rho: float
    demand: float
    bundles: tuple[RouteBundle, ...]
    subnets: tuple[Subnetwork, ...]
    tie_lines: tuple[TieLine, ...]


def aggregate(sys: CoupledSystem, gue: GueSolution,
              subnets: list[Subnetwork], bundles: list[RouteBundle | None]) -> AggregatedSystem:
    """Build the K-dimensional aggregated system at the given equilibrium.

    Subnetworks with empty bundles are dropped from the aggregation (their
    tie-line columns keep only the populated side).
    """
    kept = [k for k, b in enumerate(bundles) if b is not None]
    if not kept:
        raise Degeneracy("no active route bundle")
    kept_subnets = [subnets[k] for k in kept]
    kept_bundles = [bundles[k] for k in kept]
    K = len(kept)
    sizes = [len(b.routes) for b in kept_bundles]
    order = [r for b in kept_bundles for r in b.routes]
    R = len(order)

    t = sys.transport
    A_act = t.link_route[:, order]
    A_x = A_act.T @ (t.alpha[:, None] * A_act)
    beta_act = A_act.T @ t.beta

    # Equal-cost rows (E blocks) and bundle-sum rows make the M system.
    rows = []
    rhs_b = []
    offset = 0
    for sz in sizes:
        for i in range(sz - 1):
            e = np.zeros(R)
            e[offset + i] = 1.0
            e[offset + i + 1] = -1.0
            rows.append(e @ A_x)
            rhs_b.append(-(e @ beta_act))
        offset += sz
    offset = 0
    for sz in sizes:
        ind = np.zeros(R)
        ind[offset : offset + sz] = 1.0
        rows.append(ind)
        offset += sz
    M = np.vstack(rows)
    if np.linalg.cond(M) > 1e12:
        raise SingularAggregation("bundle system matrix is numerically singular")
    M_inv = np.linalg.inv(M)
    c_hat = M_inv[:, R - K :]
    q_vec = M_inv[:, : R - K] @ np.array(rhs_b) if R > K else np.zeros(R)

    alpha_hat = np.zeros((K, K))
    beta_hat = np.zeros(K)
    offset = 0
    for k, sz in enumerate(sizes):
        cols = slice(offset, offset + sz)
        bundle_ones = A_act[:, cols] @ np.ones(sz)
        alpha_hat[k] = c_hat.T @ (A_act.T @ (t.alpha * bundle_ones)) / sz
        beta_hat[k] = bundle_ones @ (t.alpha * (A_act @ q_vec) + t.beta) / sz
        offset += sz

    power = sys.power
    q_hat = np.zeros(K)
    mu_hat = np.zeros(K)
    d0_hat = np.zeros(K)
    for k, sub in enumerate(kept_subnets):
        disp = [i for i in sorted(sub.buses) if power.dispatchable[i]]
        if not disp or np.any(power.q_diag[disp] <= 0):
            raise Degeneracy(f"subnetwork {k} lacks strictly convex dispatchable generation")
        inv_q = 1.0 / power.q_diag[disp]
        q_hat[k] = 1.0 / inv_q.sum()
        mu_hat[k] = q_hat[k] * float(inv_q @ power.mu[disp])
        d0_hat[k] = float(power.base_load[list(sub.buses)].sum())

    lines = power_lines(power)
    congested = _congested_lines(sys, gue, lines)
    subnet_of_bus = {}
    for k, sub in enumerate(subnets):
        for b in sub.buses:
            subnet_of_bus[b] = k
    kept_pos = {k: pos for pos, k in enumerate(kept)}
    ties = []
    s_cols = []
    for ln, row, (i, ip) in congested:
        col = np.zeros(K)
        ks, kd = subnet_of_bus[i], subnet_of_bus[ip]
        if ks in kept_pos:
            col[kept_pos[ks]] = 1.0
        if kd in kept_pos:
            col[kept_pos[kd]] = -1.0
        s_cols.append(col)
        ties.append(TieLine(row, i, ip, kept_pos.get(ks), kept_pos.get(kd),
                            float(power.f_cap[row])))
    s_hat = np.column_stack(s_cols) if s_cols else np.zeros((K, 0))
    f_full = np.array([tl.capacity for tl in ties])
    f_hat = s_hat @ f_full if ties else np.zeros(K)
    # Outflow towards dropped subnetworks (and their onward ties) still
    # leaves the kept ones; s_hat @ fbar accounts for exactly the kept sides.

    rho = sys.coupling.rho
    gamma = alpha_hat + rho**2 * np.diag(q_hat)
    gamma_inv = np.linalg.inv(gamma)
    ones = np.ones(K)
    d_schur = float(ones @ gamma_inv @ ones)
    b_ul_inv = gamma_inv - np.outer(gamma_inv @ ones, ones @ gamma_inv) / d_schur

    x_hat = np.array([b.aggregate_flow for b in kept_bundles])
    lmp_hat = np.array([kept_subnets[k].lmp for k in range(K)])
    demand = sum(d for _, d in sys.od_groups())

    agg = AggregatedSystem(
        K, alpha_hat, beta_hat, q_hat, mu_hat, s_hat, f_hat, gamma, b_ul_inv,
        c_hat, q_vec, x_hat, lmp_hat, d0_hat, rho, demand,
        tuple(kept_bundles), tuple(kept_subnets), tuple(ties),
    )
    _verify_aggregate(sys, gue, agg, order)
    return agg


def _verify_aggregate(sys, gue, agg, order):
    """The aggregate GUE equations must reproduce the solved equilibrium."""
    scale = 1.0 + abs(gue.nu[0]) + np.abs(agg.gamma @ agg.x_hat).max()
    eta = gue.nu[0]
    res_ue = (
        agg.gamma @ agg.x_hat
        + agg.beta_hat
        + agg.rho * (agg.q_hat * (agg.f_hat + agg.d0_hat) + agg.mu_hat)
        - eta * np.ones(agg.K)
    )
    if np.abs(res_ue).max() > 1e-6 * scale:
        raise Degeneracy(f"aggregate GUE residual {np.abs(res_ue).max():.3e}")
    if abs(agg.x_hat.sum() - agg.demand) > 1e-6 * (1.0 + agg.demand):
        raise Degeneracy("aggregate flows do not sum to the demand")
    x_rebuilt = agg.c_hat @ agg.x_hat + agg.q_vec
    if np.abs(x_rebuilt - gue.x[order]).max() > 1e-6 * (1.0 + np.abs(gue.x).max()):
        raise Degeneracy("flow reconstruction from aggregate flows failed")
    lam_pred = agg.q_hat * (agg.rho * agg.x_hat + agg.f_hat + agg.d0_hat) + agg.mu_hat
    if np.abs(lam_pred - agg.lmp_hat).max() > 1e-6 * (1.0 + np.abs(agg.lmp_hat).max()):
        raise Degeneracy("aggregate LMP identity failed")


@dataclass(frozen=True)
class AggregateSensitivities:
    dx_dalpha: np.ndarray  # (K, K, K): [k, k'] -> dx_hat vector
    dx_dbeta: np.ndarray   # (K, K):    [k]    -> dx_hat vector
    dx_dfbar: np.ndarray   # (m', K):   [l]    -> dx_hat vector


def aggregate_sensitivities(agg: AggregatedSystem) -> AggregateSensitivities:
    K = agg.K
    dx_dbeta = np.zeros((K, K))
    dx_dalpha = np.zeros((K, K, K))
    for k in range(K):
        col = -agg.b_ul_inv @ np.eye(K)[k]
        dx_dbeta[k] = col
        for kp in range(K):
            dx_dalpha[k, kp] = agg.x_hat[kp] * col
    m = agg.s_hat.shape[1]
    dx_dfbar = np.zeros((m, K))
    for l in range(m):
        dx_dfbar[l] = -agg.rho * (agg.b_ul_inv @ (agg.q_hat * agg.s_hat[:, l]))
    return AggregateSensitivities(dx_dalpha, dx_dbeta, dx_dfbar)


# ---------------------------------------------------------------------------
# Condition verdicts
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConditionVerdicts:
    """Sign-test outcomes keyed by (bp type, parameter key).

    Keys are route indices for TT/TP, binding H-row indices for PT/PP, or
    bundle positions for the aggregated checks. A verdict of None means the
    margin sits inside the tolerance band (INDETERMINATE).
    """

    source: str
    verdicts: dict[tuple[str, object], bool | None]
    margins: dict[tuple[str, object], float]
    intermediates: dict[str, object] = field(default_factory=dict)

    def occurs(self, kind: str) -> bool:
        return any(v for (k, _), v in self.verdicts.items() if k == kind)


def _sign_verdict(margin: float, tol: float) -> bool | None:
    if margin > tol:
        return True
    if margin < -tol:
        return False
    return None


def check_fully_congested(sys: CoupledSystem, gue: GueSolution) -> ConditionVerdicts:
    """Analytic BP conditions when every line is congested (A1) and active
    routes share neither links nor buses (A2)."""
    lines = power_lines(sys.power)
    congested = _congested_lines(sys, gue, lines)
    if len(congested) != len(lines):
        raise PreconditionFailed("A1 fails: some power line is uncongested at the GUE")
    power = sys.power
    if not power.dispatchable.all() or np.any(power.q_diag <= 0):
        raise PreconditionFailed("analytic conditions need strictly convex generation everywhere")
    demand = sum(d for _, d in sys.od_groups())
    active = [r for r in range(sys.n_routes) if gue.x[r] > ACTIVE_RTOL * demand]
    bus_of = sys.bus_of_route()
    links_of = [set(np.flatnonzero(sys.transport.link_route[:, r])) for r in range(sys.n_routes)]
    for a, r1 in enumerate(active):
        for r2 in active[a + 1 :]:
            if links_of[r1] & links_of[r2]:
                raise PreconditionFailed(f"A2 fails: routes {r1} and {r2} share a link")
            if bus_of[r1] == bus_of[r2]:
                raise PreconditionFailed(f"A2 fails: routes {r1} and {r2} share a bus")

    rho = sys.coupling.rho
    lam = gue.dispatch.lmp
    alpha_r = {r: float(sys.transport.alpha @ sys.transport.link_route[:, r]) for r in active}
    beta_r = {r: float(sys.transport.beta @ sys.transport.link_route[:, r]) for r in active}
    omega = {r: 1.0 / (alpha_r[r] + rho**2 * power.q_diag[bus_of[r]]) for r in active}
    total = sum(omega.values())
    omega_t = {r: omega[r] / total for r in active}
    lam_of = {r: lam[bus_of[r]] for r in active}
    mean_term = sum(omega_t[rp] * (2 * alpha_r[rp] * gue.x[rp] + beta_r[rp]) for rp in active)
    psi = {
        r: omega[r] * (2 * alpha_r[r] * gue.x[r] + beta_r[r] - mean_term) for r in active
    }
    active_bus = {int(bus_of[r]): r for r in active}
    varsigma = {
        i: lam[i]
        - rho**2 * power.q_diag[i] * omega[r] * sum(
            omega_t[rp] * (lam[i] - lam_of[rp]) for rp in active
        )
        for i, r in active_bus.items()
    }

    verdicts: dict[tuple[str, object], bool | None] = {}
    margins: dict[tuple[str, object], float] = {}
    x_tol = 1e-6 * (1.0 + demand)
    lam_tol = 1e-6 * (1.0 + np.abs(lam).max())
    single = len(active) < 2
    for r in active:
        m_tt = -1.0 if single else psi[r] - gue.x[r]
        m_tp = -1.0 if single else sum(omega_t[rp] * (lam_of[r] - lam_of[rp]) for rp in active)
        verdicts[("TT", r)] = _sign_verdict(m_tt, x_tol)
        verdicts[("TP", r)] = _sign_verdict(m_tp, lam_tol)
        margins[("TT", r)] = m_tt
        margins[("TP", r)] = m_tp
    line_meta = {}
    for ln, row, (i, ip) in congested:
        qpsi_i = power.q_diag[i] * psi[active_bus[i]] if i in active_bus else 0.0
        qpsi_ip = power.q_diag[ip] * psi[active_bus[ip]] if ip in active_bus else 0.0
        m_pt = -(qpsi_i - qpsi_ip) if not single else -1.0
        m_pp = (varsigma.get(i, 0.0) - varsigma.get(ip, 0.0)) if not single else -1.0
        if i not in active_bus and ip not in active_bus:
            m_pt = m_pp = -1.0  # no traveler sees these prices; PBP impossible
        verdicts[("PT", row)] = _sign_verdict(m_pt, lam_tol)
        verdicts[("PP", row)] = _sign_verdict(m_pp, lam_tol)
        margins[("PT", row)] = m_pt
        margins[("PP", row)] = m_pp
        line_meta[row] = {
            "from_bus": i, "to_bus": ip,
            "from_active": i in active_bus, "to_active": ip in active_bus,
        }
    beta_vec = np.array([beta_r[r] for r in active])
    homogeneous = bool(
        len(active) > 0 and np.ptp(beta_vec) <= 1e-9 * (1.0 + np.abs(beta_vec).max())
    )
    return ConditionVerdicts(
        "fully_congested", verdicts, margins,
        {
            "active_routes": tuple(active),
            "omega": omega, "omega_tilde": omega_t, "psi": psi, "varsigma": varsigma,
            "lambda_of_route": lam_of, "route_bus": {r: int(bus_of[r]) for r in active},
            "line_meta": line_meta, "homogeneous_beta": homogeneous,
        },
    )


def classical_bp_in_bundle(sys: CoupledSystem, bundle: RouteBundle, x_hat: float) -> ConditionVerdicts:
    """Classical transportation BP inside one bundle at fixed net flow.

    The bundle is treated as a standalone road network carrying x_hat; each
    member link's congestion slope is perturbed and the total travel cost is
    differenced.
    """
    if not bundle.routes:
        raise PreconditionFailed("empty bundle")
    t = sys.transport
    cols = list(bundle.routes)
    sub_lr = t.link_route[:, cols]
    used = np.flatnonzero(sub_lr.sum(axis=1) > 0)

    def total_cost(alpha):
        from .model import TransportationNetwork

        net = TransportationNetwork(alpha, t.beta, sub_lr)
        ue = transport_ue(net, np.zeros(len(cols)), x_hat)
        return float(ue.x @ net.route_costs(ue.x))

    verdicts: dict[tuple[str, object], bool | None] = {}
    margins: dict[tuple[str, object], float] = {}
    base = total_cost(t.alpha)
    tol = 1e-6 * (1.0 + abs(base))
    for l in used:
        h = 1e-5 * (1.0 + t.alpha[l])
        up = t.alpha.copy()
        up[l] += h
        dn = t.alpha.copy()
        dn[l] = max(dn[l] - h, 0.0)
        d = (total_cost(up) - total_cost(dn)) / (up[l] - dn[l])
        margins[("CLASSICAL", int(l))] = -d
        verdicts[("CLASSICAL", int(l))] = _sign_verdict(-d, tol / (1.0 + abs(base)))
    return ConditionVerdicts("classical", verdicts, margins, {"links": tuple(int(u) for u in used)})


def check_uncongested(sys: CoupledSystem, gue: GueSolution) -> ConditionVerdicts:
    """Uncongested-network theorem: PBP and T-P never occur; T-T reduces to
    the classical BP on the active routes."""
    if gue.binding.congested_lines:
        raise PreconditionFailed("power network is congested at this GUE")
    demand = sum(d for _, d in sys.od_groups())
    active = tuple(r for r in range(sys.n_routes) if gue.x[r] > ACTIVE_RTOL * demand)
    bundle = RouteBundle(active, float(gue.x[list(active)].sum()),
                         float(sys.transport.route_costs(gue.x)[list(active)].mean()))
    verdicts: dict[tuple[str, object], bool | None] = {}
    margins: dict[tuple[str, object], float] = {}
    for row in range(sys.power.n_flow_constraints):
        verdicts[("PT", row)] = False
        verdicts[("PP", row)] = False
        margins[("PT", row)] = -1.0
        margins[("PP", row)] = -1.0
    classical = classical_bp_in_bundle(sys, bundle, bundle.aggregate_flow)
    if len(active) < 2:
        for l in classical.intermediates["links"]:
            verdicts[("TT", l)] = False
            margins[("TT", l)] = -1.0
    else:
        for (kind, l), v in classical.verdicts.items():
            verdicts[("TT", l)] = v
            margins[("TT", l)] = classical.margins[(kind, l)]
    for l in classical.intermediates["links"]:
        verdicts[("TP", l)] = False
        margins[("TP", l)] = -1.0
    return ConditionVerdicts("uncongested", verdicts, margins, {"active_routes": active})


def check_atbp(agg: AggregatedSystem) -> ConditionVerdicts:
    """Aggregated-TBP sign tests via the closed-form B_ul^{-1} derivatives.

    When alpha_hat is diagonal the simplified psi-hat forms apply as well;
    both evaluations must agree.
    """
    K = agg.K
    grad = (agg.alpha_hat + agg.alpha_hat.T) @ agg.x_hat + agg.beta_hat
    x_tol = 1e-6 * (1.0 + agg.demand)
    lam_tol = 1e-6 * (1.0 + np.abs(agg.lmp_hat).max())
    verdicts: dict[tuple[str, object], bool | None] = {}
    margins: dict[tuple[str, object], float] = {}
    dphi_t_beta = np.zeros(K)
    dphi_p_beta = np.zeros(K)
    for k in range(K):
        col = agg.b_ul_inv @ np.eye(K)[k]
        dphi_t_beta[k] = agg.x_hat[k] - float(grad @ col)
        dphi_p_beta[k] = -agg.rho * float(agg.lmp_hat @ col)
        m_tt = -dphi_t_beta[k] if K >= 2 else -1.0
        m_tp = -dphi_p_beta[k] / agg.rho if K >= 2 else -1.0
        verdicts[("TT", k)] = _sign_verdict(m_tt, x_tol)
        verdicts[("TP", k)] = _sign_verdict(m_tp, lam_tol)
        margins[("TT", k)] = m_tt
        margins[("TP", k)] = m_tp

    off_diag = np.abs(agg.alpha_hat - np.diag(np.diag(agg.alpha_hat))).max()
    psi_hat = None
    if K >= 2 and off_diag <= 1e-9 * (1.0 + np.abs(agg.alpha_hat).max()):
        diag = np.diag(agg.alpha_hat)
        omega = 1.0 / (diag + agg.rho**2 * agg.q_hat)
        omega_t = omega / omega.sum()
        mean_term = float(omega_t @ (2 * diag * agg.x_hat + agg.beta_hat))
        psi_hat = omega * (2 * diag * agg.x_hat + agg.beta_hat - mean_term)
        for k in range(K):
            m_simple = psi_hat[k] - agg.x_hat[k]
            if (verdicts[("TT", k)] is not None
                    and _sign_verdict(m_simple, x_tol) is not None
                    and _sign_verdict(m_simple, x_tol) != verdicts[("TT", k)]):
                raise Degeneracy("diagonal and general ATBP tests disagree")
            m_tp_simple = float(omega_t @ (agg.lmp_hat[k] - agg.lmp_hat))
            if (verdicts[("TP", k)] is not None
                    and _sign_verdict(m_tp_simple, lam_tol) is not None
                    and _sign_verdict(m_tp_simple, lam_tol) != verdicts[("TP", k)]):
                raise Degeneracy("diagonal and general T-P ATBP tests disagree")
    return ConditionVerdicts(
        "atbp", verdicts, margins,
        {"dphi_t_dbeta": dphi_t_beta, "dphi_p_dbeta": dphi_p_beta, "psi_hat": psi_hat},
    )


def check_pbp_aggregated(agg: AggregatedSystem) -> ConditionVerdicts:
    """PT/PP sign tests per congested tie line from the aggregated system."""
    grad = (agg.alpha_hat + agg.alpha_hat.T) @ agg.x_hat + agg.beta_hat
    lam_tol = 1e-6 * (1.0 + np.abs(agg.lmp_hat).max())
    verdicts: dict[tuple[str, object], bool | None] = {}
    margins: dict[tuple[str, object], float] = {}
    dT = {}
    dP = {}
    for l, tie in enumerate(agg.tie_lines):
        e = agg.s_hat[:, l]
        dphi_t = -agg.rho * float(grad @ (agg.b_ul_inv @ (agg.q_hat * e)))
        dphi_p = float(agg.lmp_hat @ (e - agg.rho**2 * (agg.b_ul_inv @ (agg.q_hat * e))))
        if tie.from_subnet is None and tie.to_subnet is None:
            dphi_t, dphi_p = 0.0, min(dphi_p, 0.0)
        verdicts[("PT", tie.binding_row)] = _sign_verdict(dphi_t, lam_tol * agg.rho)
        verdicts[("PP", tie.binding_row)] = _sign_verdict(dphi_p, lam_tol)
        margins[("PT", tie.binding_row)] = dphi_t
        margins[("PP", tie.binding_row)] = dphi_p
        dT[tie.binding_row] = dphi_t
        dP[tie.binding_row] = dphi_p
    return ConditionVerdicts("pbp_aggregated", verdicts, margins,
                             {"dphi_t_dfbar": dT, "dphi_p_dfbar": dP})


# ---------------------------------------------------------------------------
# Implication checks (these are theorems; violations indicate a bug)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ImplicationReport:
    checks: tuple[tuple[str, str, bool], ...]
    violations: tuple[tuple[str, str], ...]


def bp_relations(fc: ConditionVerdicts) -> ImplicationReport:
    """Check the BP-relation corollaries on fully-congested verdicts.

    Indeterminate verdicts are skipped; any violated implication is reported
    as an internal-consistency failure.
    """
    if fc.source != "fully_congested":
        raise PreconditionFailed("relations are stated for the fully congested checker")
    meta = fc.intermediates["line_meta"]
    bus_route = {b: r for r, b in fc.intermediates["route_bus"].items()}
    checks: list[tuple[str, str, bool]] = []

    def record(rule, detail, premise, conclusion):
        if premise is None or conclusion is None:
            return
        if premise:
            checks.append((rule, detail, bool(conclusion)))

    for row, info in meta.items():
        i, ip = info["from_bus"], info["to_bus"]
        pt = fc.verdicts[("PT", row)]
        pp = fc.verdicts[("PP", row)]
        if info["from_active"] and not info["to_active"]:
            r = bus_route[i]
            tt = fc.verdicts[("TT", r)]
            tp = fc.verdicts[("TP", r)]
            record("a", f"PT at row {row} => no TT at route {r}",
                   pt, None if tt is None else not tt)
            record("c", f"no PP at row {row} => TP at route {r}",
                   None if pp is None else not pp, tp)
        if info["to_active"] and not info["from_active"]:
            r = bus_route[ip]
            tt = fc.verdicts[("TT", r)]
            tp = fc.verdicts[("TP", r)]
            record("b", f"no PT at row {row} => no TT at route {r}",
                   None if pt is None else not pt, None if tt is None else not tt)
            record("d", f"PP at row {row} => TP at route {r}", pp, tp)
        if not info["from_active"] and not info["to_active"]:
            record("e", f"inactive-inactive row {row}: no PT",
                   True, None if pt is None else not pt)
            record("e", f"inactive-inactive row {row}: no PP",
                   True, None if pp is None else not pp)

    if fc.intermediates.get("homogeneous_beta"):
        for r in fc.intermediates["active_routes"]:
            tt = fc.verdicts[("TT", r)]
            tp = fc.verdicts[("TP", r)]
            record("h-a", f"TT at route {r} => no TP at route {r}",
                   tt, None if tp is None else not tp)
        for row, info in meta.items():
            pt = fc.verdicts[("PT", row)]
            pp = fc.verdicts[("PP", row)]
            if info["from_active"] and not info["to_active"]:
                record("h-b1", f"no PT at row {row} => PP at row {row}",
                       None if pt is None else not pt, pp)
            if info["to_active"] and not info["from_active"]:
                record("h-b2", f"PT at row {row} => no PP at row {row}",
                       pt, None if pp is None else not pp)
            if info["from_active"] and info["to_active"]:
                record("h-b3", f"PT at row {row} => no PP at row {row}",
                       pt, None if pp is None else not pp)

    violations = tuple((rule, detail) for rule, detail, ok in checks if not ok)
    return ImplicationReport(tuple(checks), violations)


# ---------------------------------------------------------------------------
# Whole-pipeline report (CLI `reduce`)
# ---------------------------------------------------------------------------

def reduce_report(sys: CoupledSystem, gue: GueSolution) -> dict:
    subnets = partition_subnetworks(sys, gue)
    bundles = route_bundles(sys, gue, subnets)
    out: dict = {
        "subnetworks": [
            {"buses": sorted(s.buses), "lmp": s.lmp, "internal_rows": sorted(s.internal_lines)}
            for s in subnets
        ],
        "bundles": [
            None if b is None else
            {"routes": list(b.routes), "aggregate_flow": b.aggregate_flow,
             "common_cost": b.common_cost}
            for b in bundles
        ],
    }
    agg = aggregate(sys, gue, subnets, bundles)
    atbp = check_atbp(agg)
    pbp = check_pbp_aggregated(agg)
    out["aggregated"] = {
        "alpha_hat": agg.alpha_hat.tolist(),
        "beta_hat": agg.beta_hat.tolist(),
        "q_hat": agg.q_hat.tolist(),
        "mu_hat": agg.mu_hat.tolist(),
        "s_hat": agg.s_hat.tolist(),
        "f_hat": agg.f_hat.tolist(),
        "x_hat": agg.x_hat.tolist(),
        "lmp_hat": agg.lmp_hat.tolist(),
        "b_ul_inv": agg.b_ul_inv.tolist(),
    }

    def verdict_block(cv: ConditionVerdicts) -> dict:
        return {
            f"{kind}:{key}": {"verdict": v, "margin": cv.margins[(kind, key)]}
            for (kind, key), v in sorted(cv.verdicts.items(), key=lambda kv: str(kv[0]))
        }

    out["atbp"] = verdict_block(atbp)
    out["pbp"] = verdict_block(pbp)
    try:
        fc = check_fully_congested(sys, gue)
        out["fully_congested"] = verdict_block(fc)
        rel = bp_relations(fc)
        out["implications"] = {
            "checked": len(rel.checks),
            "violations": [f"{rule}: {detail}" for rule, detail in rel.violations],
        }
    except PreconditionFailed as exc:
        out["fully_congested"] = {"skipped": str(exc)}
    return out

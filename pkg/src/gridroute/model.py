"""Domain model: networks, coupling, validation, JSON format, built-in cases.

All types are immutable after construction (arrays are write-protected), so
instances can be shared freely across threads and sweep workers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .errors import DimensionMismatch, ParseError, UnknownCase, ValidationError


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class TransportationNetwork:
    """Link-route description of one origin-destination road network.

    alpha[l] is the congestion slope of link l (cost per unit flow),
    beta[l] its free-flow cost, and link_route the 0/1 incidence matrix
    with one column per route.
    """

    alpha: np.ndarray
    beta: np.ndarray
    link_route: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "alpha", _frozen(self.alpha))
        object.__setattr__(self, "beta", _frozen(self.beta))
        object.__setattr__(self, "link_route", _frozen(self.link_route))

    @property
    def n_links(self) -> int:
        return self.link_route.shape[0]

    @property
    def n_routes(self) -> int:
        return self.link_route.shape[1]

    def route_quadratic(self) -> np.ndarray:
        """Route-space congestion matrix A^T diag(alpha) A."""
        a = self.link_route
        return a.T @ (self.alpha[:, None] * a)

    def route_fixed_cost(self) -> np.ndarray:
        return self.link_route.T @ self.beta

    def route_costs(self, x: np.ndarray) -> np.ndarray:
        """Travel cost of each route at flow vector x (charging excluded)."""
        return self.route_quadratic() @ x + self.route_fixed_cost()


@dataclass(frozen=True)
class PowerNetwork:
    """DC power network in shift-factor form.

    Each row of shift_factor is one flow constraint H_l p <= f_cap[l]; a
    line limited in both directions contributes two rows (+H_l and -H_l),
    each with its own capacity. generator_mask marks dispatchable buses
    (g is fixed to zero elsewhere); enforce_nonneg_gen adds g >= 0 at the
    dispatchable buses.
    """

    shift_factor: np.ndarray
    f_cap: np.ndarray
    q_diag: np.ndarray
    mu: np.ndarray
    base_load: np.ndarray | None = None
    generator_mask: np.ndarray | None = None
    enforce_nonneg_gen: bool = False

    def __post_init__(self):
        h = np.atleast_2d(np.array(self.shift_factor, dtype=float))
        object.__setattr__(self, "shift_factor", _frozen(h))
        object.__setattr__(self, "f_cap", _frozen(self.f_cap))
        object.__setattr__(self, "q_diag", _frozen(self.q_diag))
        object.__setattr__(self, "mu", _frozen(self.mu))
        n = h.shape[1]
        base = np.zeros(n) if self.base_load is None else self.base_load
        mask = np.ones(n) if self.generator_mask is None else self.generator_mask
        object.__setattr__(self, "base_load", _frozen(base))
        object.__setattr__(self, "generator_mask", _frozen(np.asarray(mask, dtype=float)))

    @property
    def n_buses(self) -> int:
        return self.shift_factor.shape[1]

    @property
    def n_flow_constraints(self) -> int:
        return self.shift_factor.shape[0]

    @property
    def dispatchable(self) -> np.ndarray:
        return self.generator_mask > 0.5


@dataclass(frozen=True)
class Coupling:
    """Charger placement: which route uses which charger at which bus.

    rho is the charging energy per traveler (MW); demand the total traffic.
    """

    charger_route: np.ndarray
    charger_bus: np.ndarray
    rho: float
    demand: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "charger_route", _frozen(self.charger_route))
        object.__setattr__(self, "charger_bus", _frozen(self.charger_bus))

    @property
    def n_chargers(self) -> int:
        return self.charger_route.shape[0]

    def route_bus_matrix(self) -> np.ndarray:
        """(A^CB)^T A^CR: maps route flows to bus loads (before scaling by rho)."""
        return self.charger_bus.T @ self.charger_route


@dataclass(frozen=True)
class CoupledSystem:
    transport: TransportationNetwork
    power: PowerNetwork
    coupling: Coupling
    od_demands: tuple[tuple[tuple[int, ...], float], ...] | None = None

    @property
    def n_routes(self) -> int:
        return self.transport.n_routes

    @property
    def n_buses(self) -> int:
        return self.power.n_buses

    def od_groups(self) -> list[tuple[tuple[int, ...], float]]:
        """Route-index groups and demands, one entry per O-D pair."""
        if self.od_demands is None:
            return [(tuple(range(self.n_routes)), self.coupling.demand)]
        return [(tuple(r), float(d)) for r, d in self.od_demands]

    def bus_of_route(self) -> np.ndarray:
        """Bus index of each route's charger."""
        m = self.coupling.route_bus_matrix()  # n_P x n_R
        return np.argmax(m, axis=0)

    def route_charge_prices(self, lmp: np.ndarray) -> np.ndarray:
        """Charging cost per traveler on each route given bus prices."""
        return self.coupling.rho * (self.coupling.route_bus_matrix().T @ lmp)


@dataclass(frozen=True)
class ValidationReport:
    errors: tuple[tuple[str, str], ...]
    warnings: tuple[tuple[str, str], ...]

    @property
    def ok(self) -> bool:
        return not self.errors


def validate_system(sys: CoupledSystem) -> ValidationReport:
    """Check every structural invariant; violations are returned, not raised."""
    errors: list[tuple[str, str]] = []
    warnings: list[tuple[str, str]] = []
    t, p, c = sys.transport, sys.power, sys.coupling

    m_t, n_r = t.link_route.shape
    if t.alpha.shape != (m_t,) or t.beta.shape != (m_t,):
        errors.append(("DIMENSION_MISMATCH", "alpha/beta length must equal n_links"))
    if c.charger_route.shape[1] != n_r:
        errors.append(("DIMENSION_MISMATCH", "charger_route columns must equal n_routes"))
    if c.charger_bus.shape != (c.n_chargers, p.n_buses):
        errors.append(("DIMENSION_MISMATCH", "charger_bus must be n_chargers x n_buses"))
    if p.f_cap.shape != (p.n_flow_constraints,):
        errors.append(("DIMENSION_MISMATCH", "f_cap length must equal flow constraint count"))
    if p.q_diag.shape != (p.n_buses,) or p.mu.shape != (p.n_buses,):
        errors.append(("DIMENSION_MISMATCH", "q_diag/mu length must equal n_buses"))
    if errors:
        return ValidationReport(tuple(errors), tuple(warnings))

    if np.any(t.alpha < 0):
        errors.append(("NEGATIVE_ALPHA", "alpha must be elementwise nonnegative"))
    elif np.any(t.alpha == 0):
        warnings.append(("ZERO_ALPHA", "zero congestion slopes: equilibrium flows may be non-unique"))
    if np.any(t.beta < 0):
        errors.append(("NEGATIVE_BETA", "beta must be elementwise nonnegative"))
    for r in range(n_r):
        if not np.any(t.link_route[:, r] > 0):
            warnings.append(("ZERO_LENGTH_ROUTE", f"route {r} uses no links"))

    if np.any(p.f_cap <= 0):
        errors.append(("NONPOSITIVE_CAPACITY", "all flow capacities must be positive"))
    if np.any(p.q_diag < 0):
        errors.append(("NEGATIVE_QDIAG", "quadratic generation costs must be nonnegative"))
    elif np.any((p.q_diag == 0) & p.dispatchable):
        warnings.append(("ZERO_QDIAG", "zero quadratic cost on a dispatchable bus: duals may be degenerate"))
    if np.any(p.base_load < 0):
        errors.append(("NEGATIVE_BASE_LOAD", "base load must be nonnegative"))
    if not p.dispatchable.any():
        errors.append(("NO_GENERATOR", "at least one bus must be dispatchable"))

    col_sums = c.charger_route.sum(axis=0)
    if np.any(col_sums != 1):
        errors.append(("CHARGER_MULTIPLICITY", "each route must use exactly one charger"))
    row_sums = c.charger_bus.sum(axis=1)
    if np.any(row_sums != 1):
        errors.append(("CHARGER_BUS", "each charger must connect to exactly one bus"))
    if c.rho <= 0:
        errors.append(("NONPOSITIVE_RHO", "charging energy rho must be positive"))
    if c.demand <= 0:
        errors.append(("NONPOSITIVE_DEMAND", "total demand must be positive"))

    if sys.od_demands is not None:
        seen: list[int] = []
        for routes, demand in sys.od_demands:
            seen.extend(routes)
            if demand < 0:
                errors.append(("NEGATIVE_OD_DEMAND", "per-pair demands must be nonnegative"))
        if sorted(seen) != list(range(n_r)):
            errors.append(("OD_PARTITION", "od_demands must partition the route set"))

    return ValidationReport(tuple(errors), tuple(warnings))


def charging_load(sys: CoupledSystem, x: np.ndarray, include_base: bool = False) -> np.ndarray:
    """Bus-level charging load rho * (A^CB)^T A^CR x, plus base load if asked."""
    x = np.asarray(x, dtype=float)
    if x.shape != (sys.n_routes,):
        raise DimensionMismatch(f"flow vector must have length {sys.n_routes}")
    d = sys.coupling.rho * (sys.coupling.route_bus_matrix() @ x)
    if include_base:
        d = d + sys.power.base_load
    return d


# ---------------------------------------------------------------------------
# JSON on-disk format
# ---------------------------------------------------------------------------

def system_to_dict(sys: CoupledSystem) -> dict:
    out = {
        "transport": {
            "alpha": sys.transport.alpha.tolist(),
            "beta": sys.transport.beta.tolist(),
            "link_route": sys.transport.link_route.tolist(),
        },
        "power": {
            "shift_factor": sys.power.shift_factor.tolist(),
            "f_cap": sys.power.f_cap.tolist(),
            "q_diag": sys.power.q_diag.tolist(),
            "mu": sys.power.mu.tolist(),
            "base_load": sys.power.base_load.tolist(),
            "generator_mask": sys.power.generator_mask.tolist(),
            "enforce_nonneg_gen": sys.power.enforce_nonneg_gen,
        },
        "coupling": {
            "charger_route": sys.coupling.charger_route.tolist(),
            "charger_bus": sys.coupling.charger_bus.tolist(),
            "rho": sys.coupling.rho,
            "demand": sys.coupling.demand,
        },
    }
    if sys.od_demands is not None:
        out["od_demands"] = [
            {"routes": list(routes), "demand": demand} for routes, demand in sys.od_demands
        ]
    return out


def save_system(sys: CoupledSystem) -> bytes:
    return json.dumps(system_to_dict(sys), indent=2).encode("utf-8")


def _require(mapping, key, where):
    if key not in mapping:
        raise ParseError(f"missing key '{key}' in {where}")
    return mapping[key]


def system_from_dict(doc: dict) -> CoupledSystem:
    try:
        t = _require(doc, "transport", "top-level object")
        p = _require(doc, "power", "top-level object")
        c = _require(doc, "coupling", "top-level object")
        transport = TransportationNetwork(
            alpha=_require(t, "alpha", "transport"),
            beta=_require(t, "beta", "transport"),
            link_route=_require(t, "link_route", "transport"),
        )
        power = PowerNetwork(
            shift_factor=_require(p, "shift_factor", "power"),
            f_cap=_require(p, "f_cap", "power"),
            q_diag=_require(p, "q_diag", "power"),
            mu=_require(p, "mu", "power"),
            base_load=p.get("base_load"),
            generator_mask=p.get("generator_mask"),
            enforce_nonneg_gen=bool(p.get("enforce_nonneg_gen", False)),
        )
        coupling = Coupling(
            charger_route=_require(c, "charger_route", "coupling"),
            charger_bus=_require(c, "charger_bus", "coupling"),
            rho=float(_require(c, "rho", "coupling")),
            demand=float(c.get("demand", 1.0)),
        )
        od = None
        if "od_demands" in doc and doc["od_demands"] is not None:
            od = tuple(
                (tuple(int(i) for i in entry["routes"]), float(entry["demand"]))
                for entry in doc["od_demands"]
            )
    except ParseError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed system document: {exc}") from exc
    return CoupledSystem(transport, power, coupling, od)


def load_system(data: bytes | str) -> CoupledSystem:
    """Parse and validate a system JSON document."""
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    sys = system_from_dict(doc)
    report = validate_system(sys)
    if not report.ok:
        raise ValidationError(report, "; ".join(f"{c}: {m}" for c, m in report.errors))
    return sys


# ---------------------------------------------------------------------------
# Shift-factor construction helpers
# ---------------------------------------------------------------------------

def ptdf_matrix(n_buses: int, edges: list[tuple[int, int]], reactance) -> np.ndarray:
    """Power transfer distribution factors for the lines of a connected network.

    Row l maps balanced injections to the flow on edge l, positive in the
    from->to direction. The pseudo-inverse makes the result slack-independent
    on the 1^T p = 0 subspace.
    """
    x = np.asarray(reactance, dtype=float)
    inc = np.zeros((len(edges), n_buses))
    for l, (i, j) in enumerate(edges):
        inc[l, i] = 1.0
        inc[l, j] = -1.0
    b_line = inc / x[:, None]
    b_bus = inc.T @ b_line
    return b_line @ np.linalg.pinv(b_bus)


def tree_shift_factor(n_buses: int, edges: list[tuple[int, int]]) -> np.ndarray:
    """Shift factors of a radial network (independent of line reactances).

    The flow on edge (i, j) equals the total injection on the i side of the
    cut; rows are centered so they act on balanced injection vectors.
    """
    h = np.zeros((len(edges), n_buses))
    adj = {k: set() for k in range(n_buses)}
    for i, j in edges:
        adj[i].add(j)
        adj[j].add(i)
    for l, (i, j) in enumerate(edges):
        side = {i}
        stack = [i]
        while stack:
            u = stack.pop()
            for v in adj[u]:
                if (u, v) in ((i, j), (j, i)):
                    continue
                if v not in side:
                    side.add(v)
                    stack.append(v)
        for k in side:
            h[l, k] = 1.0
        h[l] -= len(side) / n_buses
    return h


def both_directions(h_half: np.ndarray, cap) -> tuple[np.ndarray, np.ndarray]:
    """Stack +H/-H rows sharing one capacity vector."""
    cap = np.asarray(cap, dtype=float)
    return np.vstack([h_half, -h_half]), np.concatenate([cap, cap])


# ---------------------------------------------------------------------------
# Built-in cases
# ---------------------------------------------------------------------------

def _two_route_two_bus() -> CoupledSystem:
    transport = TransportationNetwork(alpha=[100.0, 1.0], beta=[0.0, 0.0], link_route=np.eye(2))
    # Single direction constrained: f = p_1 <= f_cap.
    power = PowerNetwork(shift_factor=[[1.0, 0.0]], f_cap=[0.2], q_diag=[1.0, 1.0], mu=[0.0, 0.0])
    coupling = Coupling(charger_route=np.eye(2), charger_bus=np.eye(2), rho=6.0)
    return CoupledSystem(transport, power, coupling)


H_THREE_BUS = np.array([[0.0, -0.8, -0.6], [0.0, 0.2, 0.4], [0.0, -0.2, 0.6]])


def _two_route_three_bus() -> CoupledSystem:
    transport = TransportationNetwork(alpha=[1.0, 10.0], beta=[0.0, 0.0], link_route=np.eye(2))
    h, cap = both_directions(H_THREE_BUS, [0.1, 0.3, 0.1])
    power = PowerNetwork(shift_factor=h, f_cap=cap, q_diag=[2.0, 1.0, 1.0], mu=np.zeros(3))
    coupling = Coupling(
        charger_route=np.eye(2), charger_bus=[[1, 0, 0], [0, 1, 0]], rho=6.0
    )
    return CoupledSystem(transport, power, coupling)


def _wheatstone_two_bus() -> CoupledSystem:
    # Wheatstone road network (links 0..4) plus a parallel lone link 5.
    link_route = np.zeros((6, 4))
    link_route[[0, 1], 0] = 1  # upper-left, upper-right
    link_route[[0, 2, 4], 1] = 1  # through the crossover
    link_route[[3, 4], 2] = 1  # lower-left, lower-right
    link_route[5, 3] = 1
    transport = TransportationNetwork(
        alpha=[1.0, 2.0, 2.0, 2.0, 1.0, 1.0], beta=np.zeros(6), link_route=link_route
    )
    h, cap = both_directions(np.array([[1.0, 0.0]]), [0.01])
    power = PowerNetwork(shift_factor=h, f_cap=cap, q_diag=[2.0, 1.0], mu=[0.0, 0.0])
    coupling = Coupling(
        charger_route=[[1, 1, 1, 0], [0, 0, 0, 1]], charger_bus=np.eye(2), rho=1.0
    )
    return CoupledSystem(transport, power, coupling)


# Bay-area road data: links are (tail, head, alpha, beta) with the fixed cost
# already expressed in dollars. Chargers sit at Winters, Fairfield,
# Mtn. View, and Fremont; every physical Davis -> San Jose path spawns one
# route per charger it passes.
_BAY_LINKS = [
    ("davis", "winters", 3.2e-3, 1.6),
    ("davis", "fairfield", 3.2e-3, 20.8),
    ("winters", "fairfield", 3.2e-3, 22.4),
    ("fairfield", "mtnview", 6.4e-3, 19.2),
    ("fairfield", "fremont", 9.6e-3, 12.8),
    ("mtnview", "sanjose", 6.4e-3, 12.8),
    ("fremont", "sanjose", 9.6e-3, 19.2),
]
_BAY_PATHS = [
    (1, 3, 5),  # Davis-Fairfield-MtnView-SanJose
    (1, 4, 6),  # Davis-Fairfield-Fremont-SanJose
    (0, 2, 3, 5),  # Davis-Winters-Fairfield-MtnView-SanJose
    (0, 2, 4, 6),  # Davis-Winters-Fairfield-Fremont-SanJose
]
_BAY_CHARGER_NODES = ["winters", "fairfield", "mtnview", "fremont"]
_BAY_CHARGER_BUSES = [3, 4, 5, 7]  # IEEE-9 buses 4, 5, 6, 8 (0-based)

# IEEE 9-bus branch list: (from, to) 0-based, series reactance (p.u.).
_IEEE9_EDGES = [(0, 3), (3, 4), (4, 5), (2, 5), (5, 6), (6, 7), (1, 7), (7, 8), (8, 3)]
_IEEE9_X = [0.0576, 0.092, 0.17, 0.0586, 0.1008, 0.072, 0.0625, 0.161, 0.085]
_IEEE9_FCAP = [250.0, 250.0, 25.0, 300.0, 10.0, 250.0, 250.0, 250.0, 250.0]


def _bay_routes(links, paths, extra_paths=()):
    """Expand physical paths into (link set, charger) routes."""
    node_of_charger = {name: k for k, name in enumerate(_BAY_CHARGER_NODES)}
    all_paths = list(paths) + list(extra_paths)
    routes = []
    for path in all_paths:
        nodes = {links[l][0] for l in path} | {links[l][1] for l in path}
        for name in _BAY_CHARGER_NODES:
            if name in nodes:
                routes.append((tuple(path), node_of_charger[name]))
    return routes


def _bay_power() -> PowerNetwork:
    h_half = ptdf_matrix(9, _IEEE9_EDGES, _IEEE9_X)
    h, cap = both_directions(h_half, _IEEE9_FCAP)
    return PowerNetwork(
        shift_factor=h,
        f_cap=cap,
        q_diag=[0.11, 0.085, 0.1225, 0, 0, 0, 0, 0, 0],
        mu=[5.0, 1.2, 1.0, 0, 0, 0, 0, 0, 0],
        base_load=[0, 480, 0, 10, 160, 80, 0, 40, 120],
        generator_mask=[1, 1, 1, 0, 0, 0, 0, 0, 0],
        enforce_nonneg_gen=True,
    )


def _bay_system(links, routes) -> CoupledSystem:
    m_t = len(links)
    link_route = np.zeros((m_t, len(routes)))
    charger_route = np.zeros((4, len(routes)))
    for r, (path, charger) in enumerate(routes):
        link_route[list(path), r] = 1
        charger_route[charger, r] = 1
    charger_bus = np.zeros((4, 9))
    for k, bus in enumerate(_BAY_CHARGER_BUSES):
        charger_bus[k, bus] = 1
    transport = TransportationNetwork(
        alpha=[a for (_, _, a, _) in links],
        beta=[b for (_, _, _, b) in links],
        link_route=link_route,
    )
    coupling = Coupling(charger_route=charger_route, charger_bus=charger_bus, rho=0.02, demand=15000.0)
    return CoupledSystem(transport, _bay_power(), coupling)


def _bay_area_ieee9() -> CoupledSystem:
    return _bay_system(_BAY_LINKS, _bay_routes(_BAY_LINKS, _BAY_PATHS))


def bay_area_ieee9_wheatstone() -> CoupledSystem:
    """Bay-area case with the extra Fremont -> Mtn. View road.

    The added link embeds a Wheatstone subnetwork among Fairfield, Mtn. View,
    Fremont, and San Jose; travel costs are the capacity-study values (only
    the crossing links are congestible). One new route uses the shortcut,
    charging at Winters.
    """
    links = [
        (tail, head, a, b)
        for (tail, head, _, _), a, b in zip(
            _BAY_LINKS + [("fremont", "mtnview", 0.0, 0.0)],
            [0, 0, 0, 0, 6.67e-4, 6.67e-4, 0, 1.0e-3],
            [0, 0, 0, 20.0, 10.0, 10.0, 20.0, 0.0],
        )
    ]
    routes = _bay_routes(links, _BAY_PATHS)
    routes.append(((0, 2, 4, 7, 5), 0))  # shortcut path, charger at Winters
    return _bay_system(links, routes)


_BUILTINS = {
    "two_route_two_bus": _two_route_two_bus,
    "two_route_three_bus": _two_route_three_bus,
    "wheatstone_two_bus": _wheatstone_two_bus,
    "bay_area_ieee9": _bay_area_ieee9,
}


def builtin_case(name: str) -> CoupledSystem:
    """Return one of the fully parameterized example systems."""
    try:
        factory = _BUILTINS[name]
    except KeyError:
        raise UnknownCase(f"unknown case '{name}'; choose from {sorted(_BUILTINS)}") from None
    return factory()


def builtin_case_names() -> list[str]:
    return sorted(_BUILTINS)


# ---------------------------------------------------------------------------
# Parameter editing (systems are immutable; sweeps work on modified copies)
# ---------------------------------------------------------------------------

def with_alpha(sys: CoupledSystem, link: int, value: float) -> CoupledSystem:
    alpha = sys.transport.alpha.copy()
    alpha[link] = value
    return replace(sys, transport=replace(sys.transport, alpha=alpha))


def with_fbar(sys: CoupledSystem, row: int, value: float) -> CoupledSystem:
    cap = sys.power.f_cap.copy()
    cap[row] = value
    return replace(sys, power=replace(sys.power, f_cap=cap))


def with_rho(sys: CoupledSystem, value: float) -> CoupledSystem:
    return replace(sys, coupling=replace(sys.coupling, rho=value))


def with_q_scale(sys: CoupledSystem, sigma: float) -> CoupledSystem:
    return replace(sys, power=replace(sys.power, q_diag=sys.power.q_diag * sigma))

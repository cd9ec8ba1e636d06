"""Shared fixtures and random-instance generators."""

from __future__ import annotations

import numpy as np
import pytest

from gridroute.equilibrium import solve_gue
from gridroute.model import (
    CoupledSystem,
    Coupling,
    PowerNetwork,
    TransportationNetwork,
    both_directions,
    builtin_case,
    tree_shift_factor,
)


@pytest.fixture
def two_bus():
    return builtin_case("two_route_two_bus")


@pytest.fixture
def three_bus():
    return builtin_case("two_route_three_bus")


@pytest.fixture
def wheatstone():
    return builtin_case("wheatstone_two_bus")


@pytest.fixture
def bay():
    return builtin_case("bay_area_ieee9")


def random_tree(rng, n_buses):
    return [(int(rng.integers(0, i)), i) for i in range(1, n_buses)]


def random_radial_instance(rng, n_buses=3, tight_caps=True, shared_loads=False):
    """A radial coupled system with one charger/route per bus.

    Each route uses one or two private links, so active routes never share
    links or buses (assumption A2 of the fully congested analysis). Tight
    caps push the network toward full congestion.
    """
    edges = random_tree(rng, n_buses)
    h_half = tree_shift_factor(n_buses, edges)
    caps = rng.uniform(0.01, 0.08, size=len(edges)) if tight_caps else rng.uniform(0.5, 3.0, size=len(edges))
    h, f_cap = both_directions(h_half, caps)
    n_routes = n_buses
    links_per_route = rng.integers(1, 3, size=n_routes)
    m_t = int(links_per_route.sum())
    link_route = np.zeros((m_t, n_routes))
    pos = 0
    for r, k in enumerate(links_per_route):
        link_route[pos : pos + k, r] = 1
        pos += k
    transport = TransportationNetwork(
        alpha=rng.uniform(0.5, 3.0, size=m_t),
        beta=rng.uniform(0.0, 2.0, size=m_t),
        link_route=link_route,
    )
    power = PowerNetwork(
        shift_factor=h,
        f_cap=f_cap,
        q_diag=rng.uniform(0.5, 2.5, size=n_buses),
        mu=rng.uniform(0.0, 1.0, size=n_buses),
        base_load=rng.uniform(0.0, 0.3, size=n_buses) if shared_loads else None,
    )
    coupling = Coupling(
        charger_route=np.eye(n_routes),
        charger_bus=np.eye(n_buses),
        rho=float(rng.uniform(0.5, 2.0)),
        demand=1.0,
    )
    return CoupledSystem(transport, power, coupling)


def solved_fully_congested_instances(seed, count, max_tries=4000):
    """Yield (system, gue) pairs that are fully congested and nondegenerate."""
    rng = np.random.default_rng(seed)
    found = 0
    tries = 0
    n_lines_of = {}
    while found < count and tries < max_tries:
        tries += 1
        sys = random_radial_instance(rng, n_buses=int(rng.integers(2, 5)))
        try:
            gue = solve_gue(sys)
        except Exception:
            continue
        if gue.binding.degenerate:
            continue
        n_lines = sys.power.n_flow_constraints // 2
        lines_hit = {l % n_lines for l in gue.binding.congested_lines}
        if len(lines_hit) != n_lines:
            continue
        if _near_boundary(sys, gue):
            continue
        found += 1
        yield sys, gue


def solved_partially_congested_instances(seed, count, max_tries=6000):
    """Radial instances with at least one congested and one uncongested line."""
    rng = np.random.default_rng(seed)
    found = 0
    tries = 0
    while found < count and tries < max_tries:
        tries += 1
        n_buses = int(rng.integers(3, 5))
        sys = random_radial_instance(rng, n_buses=n_buses)
        # Loosen a random subset of caps so some lines stay uncongested.
        cap = sys.power.f_cap.copy()
        n_lines = len(cap) // 2
        loose = rng.random(n_lines) < 0.5
        for l in range(n_lines):
            if loose[l]:
                cap[l] = cap[l + n_lines] = 10.0
        from dataclasses import replace

        sys = replace(sys, power=replace(sys.power, f_cap=cap))
        try:
            gue = solve_gue(sys)
        except Exception:
            continue
        if gue.binding.degenerate:
            continue
        lines_hit = {l % n_lines for l in gue.binding.congested_lines}
        if not lines_hit or len(lines_hit) == n_lines:
            continue
        if _near_boundary(sys, gue):
            continue
        found += 1
        yield sys, gue


def _near_boundary(sys, gue, rel=1e-4):
    """True when any constraint sits too close to its classification edge."""
    x = gue.x
    demand = sum(d for _, d in sys.od_groups())
    for r in range(sys.n_routes):
        if 1e-7 * demand < x[r] < rel * demand:
            return True
    flows = sys.power.shift_factor @ gue.dispatch.p
    resid = sys.power.f_cap - flows
    lam_scale = 1.0 + np.abs(gue.dispatch.lmp).max()
    for l in range(sys.power.n_flow_constraints):
        near_binding = resid[l] <= 1e-7 * (1.0 + sys.power.f_cap[l])
        if near_binding and gue.dispatch.eta[l] < rel * lam_scale:
            return True
        if not near_binding and resid[l] < rel * (1.0 + sys.power.f_cap[l]):
            return True
    return False

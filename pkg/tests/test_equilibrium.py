"""Equilibrium tests: dispatch duals, UE oracle checks, GUE closed forms."""

from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridroute.equilibrium import (
    economic_dispatch,
    gue_to_dict,
    social_cost_values,
    solve_gue,
    solve_gue_multi_od,
    transport_ue,
)
from gridroute.errors import InfeasibleDispatch
from gridroute.model import (
    CoupledSystem,
    Coupling,
    PowerNetwork,
    TransportationNetwork,
    builtin_case,
    charging_load,
    with_fbar,
)


def section52_system():
    """3-bus system with free generation at bus 1 (congestion pattern 1+,3+)."""
    base = builtin_case("two_route_three_bus")
    return replace(
        base,
        transport=TransportationNetwork([1.0, 1.0], [0.0, 0.0], np.eye(2)),
        power=replace(base.power, q_diag=np.array([0.0, 1.0, 1.0])),
    )


def test_dispatch_congested_two_bus_duals():
    power = builtin_case("two_route_two_bus").power
    power = replace(power, f_cap=np.array([0.1]))
    sol = economic_dispatch(power, np.array([0.3, 0.7]))
    assert sol.lmp == pytest.approx([0.4, 0.6], abs=1e-9)
    assert sol.g == pytest.approx([0.4, 0.6], abs=1e-9)
    assert sol.eta[0] == pytest.approx(0.2, abs=1e-8)


def test_dispatch_uncongested_two_bus_split():
    power = builtin_case("two_route_two_bus").power  # f_cap = 0.2
    sol = economic_dispatch(power, np.array([0.04, 0.16]))
    assert sol.g == pytest.approx([0.1, 0.1], abs=1e-9)
    assert sol.lmp[0] == pytest.approx(sol.lmp[1], abs=1e-9)


def test_dispatch_three_bus_pattern_closed_form():
    # Pattern f1 = +fbar1, f3 = +fbar3 under free generation at bus 1.
    sys = section52_system()
    f1, f3 = 0.1, 0.08
    sysf = with_fbar(with_fbar(sys, 2, f3), 5, f3)
    gue = solve_gue(sysf)
    d = charging_load(sysf, gue.x)
    sol = economic_dispatch(sysf.power, d)
    assert sol.g[2] == pytest.approx((4 * f3 - f1) / 3, abs=1e-8)
    flows = sysf.power.shift_factor[:3] @ sol.p
    assert abs(flows[1]) == pytest.approx(abs(f3 - f1) / 3, abs=1e-8)
    assert sol.lmp == pytest.approx(sysf.power.q_diag * sol.g, abs=1e-8)


def test_dispatch_infeasible_when_masked():
    # Single generator behind a tiny line cannot serve the remote load.
    power = PowerNetwork(
        shift_factor=[[1.0, 0.0], [-1.0, 0.0]],
        f_cap=[0.1, 0.1],
        q_diag=[1.0, 1.0],
        mu=[0.0, 0.0],
        generator_mask=[1, 0],
    )
    with pytest.raises(InfeasibleDispatch):
        economic_dispatch(power, np.array([0.0, 1.0]))


def test_transport_ue_symmetric():
    net = TransportationNetwork([1.0, 1.0], [0.0, 0.0], np.eye(2))
    ue = transport_ue(net, np.zeros(2), 1.0)
    assert ue.x == pytest.approx([0.5, 0.5], abs=1e-9)


def test_transport_ue_price_shift_closed_form():
    # x1 = (rho(l2 - l1) + a2) / (a1 + a2), clipped to the simplex.
    a1, a2, rho = 2.0, 3.0, 1.5
    net = TransportationNetwork([a1, a2], [0.0, 0.0], np.eye(2))
    for l1, l2 in [(0.2, 0.9), (0.0, 0.0), (5.0, 0.0)]:
        ue = transport_ue(net, rho * np.array([l1, l2]), 1.0)
        expect = min(max((rho * (l2 - l1) + a2) / (a1 + a2), 0.0), 1.0)
        assert ue.x[0] == pytest.approx(expect, abs=1e-9)


def test_transport_ue_dominated_route_grid_oracle():
    net = TransportationNetwork(
        alpha=[1.0, 2.0, 1.0], beta=[0.0, 0.0, 50.0], link_route=np.eye(3)
    )
    prices = np.array([0.3, 0.1, 0.0])
    ue = transport_ue(net, prices, 1.0)
    # Independent oracle: minimize the potential over a fine simplex grid.
    best, best_val = None, np.inf
    n = 200
    for i in range(n + 1):
        for j in range(n + 1 - i):
            x = np.array([i, j, n - i - j]) / n
            val = 0.5 * x @ net.route_quadratic() @ x + (net.route_fixed_cost() + prices) @ x
            if val < best_val:
                best, best_val = x, val
    assert np.abs(ue.x - best).max() <= 1.0 / n
    assert ue.x[2] == pytest.approx(0.0, abs=1e-9)
    costs = net.route_costs(ue.x) + prices
    assert ue.xi[2] == pytest.approx(costs[2] - min(costs), abs=1e-7)


def test_gue_three_bus_pattern_a_closed_form():
    # Free bus-1 generation: x1 from the pattern {f1=+f1bar, f3=+f3bar} form.
    sys = section52_system()
    gue = solve_gue(sys)
    a1, a2, rho = 1.0, 1.0, 6.0
    q1, q2 = 0.0, 1.0
    f1, f3 = 0.1, 0.1
    denom = a1 + a2 + rho**2 * (q1 + q2)
    x1 = (a2 + rho**2 * q2 - rho * q1 / 3 * (4 * f1 - f3) - rho * q2 * (f1 + f3)) / denom
    assert gue.x[0] == pytest.approx(x1, abs=1e-9)
    g1 = rho * gue.x[0] + (4 * f1 - f3) / 3
    g2 = rho * gue.x[1] - (f1 + f3)
    assert gue.dispatch.g[:2] == pytest.approx([g1, g2], abs=1e-8)
    assert gue.dispatch.lmp == pytest.approx(
        sys.power.q_diag * gue.dispatch.g, abs=1e-8
    )


def test_gue_three_bus_pattern_b_closed_form(three_bus):
    # Base parameters congest line 1 in reverse and line 3 forward; the
    # remark's closed form gives x1 = 48/119 at fbar = (0.1, 0.3, 0.1).
    gue = solve_gue(three_bus)
    assert gue.x[0] == pytest.approx(48 / 119, abs=1e-9)
    assert sorted(gue.binding.congested_lines) == [2, 3]


def test_gue_wheatstone_example_values(wheatstone):
    gue = solve_gue(wheatstone)
    x_hat = (gue.x[:3].sum(), gue.x[3])
    assert x_hat[0] == pytest.approx(0.37, abs=0.01)
    assert x_hat[1] == pytest.approx(0.63, abs=0.01)
    assert gue.dispatch.lmp[0] == pytest.approx(0.73, abs=0.01)
    assert gue.dispatch.lmp[1] == pytest.approx(0.63, abs=0.01)
    # Flow split inside the Wheatstone bundle is 3:1:3.
    assert gue.x[:3] * 7 == pytest.approx([3, 1, 3] * np.array(x_hat[0]), abs=1e-6)


def test_gue_symmetric_uncongested():
    sys = builtin_case("two_route_two_bus")
    sys = replace(
        sys,
        transport=TransportationNetwork([1.0, 1.0], [0.0, 0.0], np.eye(2)),
        power=replace(sys.power, f_cap=np.array([10.0])),
    )
    gue = solve_gue(sys)
    assert gue.x == pytest.approx([0.5, 0.5], abs=1e-9)
    assert gue.dispatch.lmp[0] == pytest.approx(gue.dispatch.lmp[1], abs=1e-9)
    assert not gue.binding.congested_lines
    assert np.abs(gue.dispatch.eta).max() <= 1e-9


def test_gue_fixed_point_invariant(two_bus):
    gue = solve_gue(two_bus)
    prices = two_bus.route_charge_prices(gue.dispatch.lmp)
    ue = transport_ue(two_bus.transport, prices, 1.0)
    assert np.abs(ue.x - gue.x).max() <= 1e-7


def test_gue_dispatch_optimality_invariant(bay):
    gue = solve_gue(bay)
    redo = economic_dispatch(bay.power, charging_load(bay, gue.x))
    assert redo.cost == pytest.approx(gue.dispatch.cost, rel=1e-9)


def test_gue_complementary_slackness(three_bus):
    gue = solve_gue(three_bus)
    assert np.abs(gue.xi * gue.x).max() <= 1e-7


def test_route_shuffle_uniqueness(wheatstone):
    gue = solve_gue(wheatstone)
    perm = [3, 1, 0, 2]
    t = wheatstone.transport
    shuffled = replace(
        wheatstone,
        transport=TransportationNetwork(t.alpha, t.beta, t.link_route[:, perm]),
        coupling=Coupling(
            wheatstone.coupling.charger_route[:, perm],
            wheatstone.coupling.charger_bus,
            wheatstone.coupling.rho,
        ),
    )
    gue2 = solve_gue(shuffled)
    assert np.abs(gue2.x - gue.x[perm]).max() <= 1e-8


def test_multi_od_single_pair_reduces(two_bus):
    gue = solve_gue(two_bus)
    multi = solve_gue_multi_od(two_bus, [((0, 1), 1.0)])
    assert np.abs(multi.x - gue.x).max() <= 1e-9
    assert multi.nu[0] == pytest.approx(gue.nu[0], abs=1e-7)


def test_multi_od_two_pairs_share_grid():
    base = builtin_case("two_route_two_bus")
    t = base.transport
    link_route = np.zeros((4, 4))
    link_route[:2, :2] = np.eye(2)
    link_route[2:, 2:] = np.eye(2)
    transport = TransportationNetwork(
        alpha=[100.0, 1.0, 50.0, 2.0], beta=np.zeros(4), link_route=link_route
    )
    coupling = Coupling(
        charger_route=np.vstack([np.eye(2), np.eye(2)]).T.reshape(2, 4) * 0 + np.array(
            [[1, 0, 1, 0], [0, 1, 0, 1]]
        ),
        charger_bus=np.eye(2),
        rho=6.0,
    )
    sys = CoupledSystem(transport, base.power, coupling,
                        od_demands=(((0, 1), 1.0), ((2, 3), 0.7)))
    gue = solve_gue(sys)
    assert gue.x[:2].sum() == pytest.approx(1.0, abs=1e-9)
    assert gue.x[2:].sum() == pytest.approx(0.7, abs=1e-9)
    # Each pair's active routes share a per-pair uniform total cost.
    for routes, nu in zip(((0, 1), (2, 3)), gue.nu):
        active = [r for r in routes if gue.x[r] > 1e-6]
        assert np.abs(gue.route_cost[active] - nu).max() <= 1e-6 * (1 + abs(nu))


def test_multi_od_zero_demand_pair():
    base = builtin_case("two_route_two_bus")
    sys = CoupledSystem(base.transport, base.power, base.coupling,
                        od_demands=(((0,), 0.0), ((1,), 1.0)))
    gue = solve_gue(sys)
    assert gue.x[0] == pytest.approx(0.0, abs=1e-9)
    assert gue.x[1] == pytest.approx(1.0, abs=1e-9)


@given(st.integers(0, 10_000))
@settings(max_examples=25, deadline=None)
def test_congested_two_bus_dual_law(seed):
    # For random (x, fbar, rho) in the congested regime the LMPs obey
    # lmp = (rho x1 + fbar, rho x2 - fbar).
    rng = np.random.default_rng(seed)
    x1 = rng.uniform(0.0, 0.45)
    rho = rng.uniform(0.5, 4.0)
    fbar = rng.uniform(0.01, 0.9) * rho * (1 - 2 * x1) / 2
    if fbar <= 1e-4:
        return
    power = PowerNetwork([[1.0, 0.0]], [fbar], [1.0, 1.0], [0.0, 0.0])
    sol = economic_dispatch(power, rho * np.array([x1, 1 - x1]))
    assert sol.lmp[0] == pytest.approx(rho * x1 + fbar, abs=1e-8)
    assert sol.lmp[1] == pytest.approx(rho * (1 - x1) - fbar, abs=1e-8)


def test_gue_json_dump_schema(three_bus):
    gue = solve_gue(three_bus)
    doc = gue_to_dict(three_bus, gue)
    assert set(doc) == {
        "x", "g", "p", "lambda", "eta", "nu", "phi_t", "phi_p", "phi_c",
        "congested_lines", "zero_routes",
    }
    assert doc["phi_c"] == pytest.approx(doc["phi_t"] + doc["phi_p"])

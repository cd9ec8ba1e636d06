"""Model and format tests: validation, round-trips, built-in cases."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridroute.errors import DimensionMismatch, ParseError, UnknownCase, ValidationError
from gridroute.model import (
    H_THREE_BUS,
    Coupling,
    builtin_case,
    builtin_case_names,
    charging_load,
    load_system,
    ptdf_matrix,
    save_system,
    tree_shift_factor,
    validate_system,
)


def test_builtin_two_route_two_bus_valid(two_bus):
    report = validate_system(two_bus)
    assert report.ok
    assert two_bus.coupling.charger_route.shape == (2, 2)


def test_charger_multiplicity_error(two_bus):
    from dataclasses import replace

    bad = replace(two_bus, coupling=Coupling(
        charger_route=[[1, 1], [1, 0]], charger_bus=np.eye(2), rho=6.0))
    report = validate_system(bad)
    assert ("CHARGER_MULTIPLICITY", ) == tuple(c for c, _ in report.errors)[:1]


def test_nonpositive_capacity_error(two_bus):
    from dataclasses import replace

    bad = replace(two_bus, power=replace(two_bus.power, f_cap=np.array([0.0])))
    codes = {c for c, _ in validate_system(bad).errors}
    assert "NONPOSITIVE_CAPACITY" in codes


def test_od_partition_error(two_bus):
    from dataclasses import replace

    bad = replace(two_bus, od_demands=(((0,), 0.5),))
    codes = {c for c, _ in validate_system(bad).errors}
    assert "OD_PARTITION" in codes


def test_save_load_round_trip_bit_exact(bay):
    blob = save_system(bay)
    back = load_system(blob)
    assert save_system(back) == blob
    assert np.array_equal(back.transport.alpha, bay.transport.alpha)
    assert np.array_equal(back.power.shift_factor, bay.power.shift_factor)


def test_load_missing_rho_is_parse_error(two_bus):
    import json

    doc = json.loads(save_system(two_bus))
    del doc["coupling"]["rho"]
    with pytest.raises(ParseError):
        load_system(json.dumps(doc))


def test_load_validates():
    import json

    doc = json.loads(save_system(builtin_case("two_route_two_bus")))
    doc["power"]["f_cap"] = [0.0]
    with pytest.raises(ValidationError):
        load_system(json.dumps(doc))


def test_builtin_unknown_case():
    with pytest.raises(UnknownCase):
        builtin_case("nope")
    assert set(builtin_case_names()) == {
        "two_route_two_bus", "two_route_three_bus", "wheatstone_two_bus", "bay_area_ieee9",
    }


def test_three_bus_shift_factor(three_bus):
    assert np.allclose(three_bus.power.shift_factor[:3], H_THREE_BUS)
    assert np.allclose(three_bus.power.shift_factor[3:], -H_THREE_BUS)


def test_bay_case_parameters(bay):
    p = bay.power
    assert p.n_buses == 9
    assert np.allclose(p.q_diag, [0.11, 0.085, 0.1225, 0, 0, 0, 0, 0, 0])
    assert np.allclose(p.mu, [5, 1.2, 1, 0, 0, 0, 0, 0, 0])
    assert np.allclose(p.base_load, [0, 480, 0, 10, 160, 80, 0, 40, 120])
    assert np.allclose(p.f_cap[:9], [250, 250, 25, 300, 10, 250, 250, 250, 250])
    assert bay.coupling.rho == 0.02
    assert bay.coupling.demand == 15000
    assert bay.n_routes == 10
    assert np.allclose(bay.transport.alpha, 1e-3 * np.array([3.2, 3.2, 3.2, 6.4, 9.6, 6.4, 9.6]))
    assert np.allclose(bay.transport.beta, [1.6, 20.8, 22.4, 19.2, 12.8, 12.8, 19.2])
    # Each physical path spawns one route per charger on it: 2+2+3+3.
    assert bay.coupling.charger_route.sum(axis=0).tolist() == [1.0] * 10


def test_charging_load_identity_incidence(two_bus):
    d = charging_load(two_bus, np.array([0.3, 0.7]))
    assert np.allclose(d, 6.0 * np.array([0.3, 0.7]))
    d1 = charging_load(two_bus, np.array([1.0, 0.0]))
    assert np.allclose(d1, [6.0, 0.0])


def test_charging_load_bay_matrix_product(bay):
    x = np.full(10, 1500.0)
    d = charging_load(bay, x)
    explicit = 0.02 * (bay.coupling.charger_bus.T @ (bay.coupling.charger_route @ x))
    assert np.allclose(d, explicit, atol=1e-12)
    assert d.sum() == pytest.approx(0.02 * 15000)


def test_charging_load_dimension_mismatch(two_bus):
    with pytest.raises(DimensionMismatch):
        charging_load(two_bus, np.ones(3))


@given(st.floats(-3, 3), st.floats(-3, 3))
@settings(max_examples=40, deadline=None)
def test_charging_load_is_linear(a, b):
    sys = builtin_case("wheatstone_two_bus")
    rng = np.random.default_rng(0)
    x1, x2 = rng.random(4), rng.random(4)
    lhs = charging_load(sys, a * x1 + b * x2)
    rhs = a * charging_load(sys, x1) + b * charging_load(sys, x2)
    assert np.allclose(lhs, rhs, atol=1e-9)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=30, deadline=None)
def test_load_conservation(seed):
    sys = builtin_case("bay_area_ieee9")
    rng = np.random.default_rng(seed)
    x = rng.random(10) * 1000
    with_base = charging_load(sys, x, include_base=True)
    assert with_base.sum() - sys.power.base_load.sum() == pytest.approx(
        sys.coupling.rho * x.sum(), rel=1e-12
    )


def test_tree_shift_factor_meters_cut():
    h = tree_shift_factor(4, [(0, 1), (1, 2), (1, 3)])
    p = np.array([1.0, -0.25, -0.25, -0.5])
    flows = h @ p
    assert flows[0] == pytest.approx(1.0)      # everything leaves bus 0
    assert flows[1] == pytest.approx(0.25)     # into the bus-2 leaf
    assert flows[2] == pytest.approx(0.5)


def test_ptdf_balanced_flow_conservation():
    h = ptdf_matrix(3, [(0, 1), (1, 2), (2, 0)], [1.0, 1.0, 1.0])
    p = np.array([1.0, -1.0, 0.0])
    flows = h @ p
    # Injection at 0 splits 2/3 direct and 1/3 around the ring.
    assert flows[0] == pytest.approx(2 / 3)
    assert flows[1] == pytest.approx(-1 / 3)
    assert flows[2] == pytest.approx(-1 / 3)

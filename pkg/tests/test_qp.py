"""QP engine tests: KKT exactness, oracle equivalence, invariances."""

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridroute.qp import QpProblem, QpStatus, solve_qp, verify_kkt


def box_problem(P, q, lo, hi):
    n = len(q)
    A_in = np.vstack([np.eye(n), -np.eye(n)])
    b_in = np.concatenate([hi, -lo])
    return QpProblem(P, q, np.zeros((0, n)), np.zeros(0), A_in, b_in)


def enumerate_active_sets(prob, tol=1e-9):
    """Brute-force oracle: try every subset of inequalities as equalities,
    keep the feasible candidate with the smallest objective."""
    m = prob.A_in.shape[0]
    best = None
    for k in range(m + 1):
        for subset in itertools.combinations(range(m), k):
            A = np.vstack([prob.A_eq, prob.A_in[list(subset)]])
            b = np.concatenate([prob.b_eq, prob.b_in[list(subset)]])
            kkt = np.zeros((prob.n + A.shape[0], prob.n + A.shape[0]))
            kkt[: prob.n, : prob.n] = prob.P
            kkt[: prob.n, prob.n :] = A.T
            kkt[prob.n :, : prob.n] = A
            rhs = np.concatenate([-prob.q, b])
            z_nu, res, rank, _ = np.linalg.lstsq(kkt, rhs, rcond=None)
            z = z_nu[: prob.n]
            if A.shape[0] and np.abs(A @ z - b).max() > 1e-7:
                continue
            if np.abs(prob.P @ z + prob.q + A.T @ z_nu[prob.n :]).max() > 1e-6 * (
                1 + np.abs(prob.q).max()
            ):
                continue
            if prob.A_in.shape[0] and (prob.A_in @ z - prob.b_in).max() > 1e-7 * (
                1 + np.abs(prob.b_in).max()
            ):
                continue
            obj = prob.objective(z)
            if best is None or obj < best[0] - 1e-12:
                best = (obj, z)
    return best


def test_single_variable_bound():
    # min 1/2 z^2 s.t. z >= 1
    prob = QpProblem(np.eye(1), np.zeros(1), np.zeros((0, 1)), np.zeros(0),
                     -np.eye(1), -np.ones(1))
    sol = solve_qp(prob)
    assert sol.status is QpStatus.OPTIMAL
    assert sol.z[0] == pytest.approx(1.0, abs=1e-9)
    assert sol.mu_in[0] == pytest.approx(1.0, abs=1e-8)
    assert 0 in sol.active_set


def test_two_bus_dispatch_binding():
    # min 1/2 (g1^2 + g2^2) s.t. g1 = 0.3 + f, g2 = 0.7 - f, f <= 0.1:
    # eliminating f: variables (g1, g2), g1 + g2 = 1, g1 - 0.3 <= 0.1.
    P = np.eye(2)
    prob = QpProblem(P, np.zeros(2), np.ones((1, 2)), np.array([1.0]),
                     np.array([[1.0, 0.0]]), np.array([0.4]))
    sol = solve_qp(prob)
    assert sol.z == pytest.approx([0.4, 0.6], abs=1e-9)
    assert verify_kkt(prob, sol).max_residual() <= 1e-8


def test_infeasible_detected():
    prob = QpProblem(np.eye(1), np.zeros(1), np.zeros((0, 1)), np.zeros(0),
                     np.array([[1.0], [-1.0]]), np.array([-1.0, -1.0]))
    assert solve_qp(prob).status is QpStatus.INFEASIBLE


def test_unbounded_detected():
    prob = QpProblem(np.zeros((1, 1)), np.ones(1), np.zeros((0, 1)), np.zeros(0),
                     np.array([[1.0]]), np.array([5.0]))
    assert solve_qp(prob).status is QpStatus.UNBOUNDED


def test_kkt_report_perturbation():
    prob = QpProblem(np.eye(2) * 3, np.array([1.0, -2.0]), np.zeros((0, 2)), np.zeros(0),
                     np.eye(2), np.array([10.0, 10.0]))
    sol = solve_qp(prob)
    assert verify_kkt(prob, sol).max_residual() <= 1e-9
    bumped = sol.z + np.array([1e-3, 0.0])
    report = verify_kkt(prob, type(sol)(bumped, sol.lambda_eq, sol.mu_in,
                                        prob.objective(bumped), sol.status, sol.active_set))
    assert report.stationarity_inf_norm == pytest.approx(3e-3, rel=1e-6)


def test_negative_multiplier_flagged():
    prob = QpProblem(np.eye(1), np.zeros(1), np.zeros((0, 1)), np.zeros(0),
                     np.eye(1), np.ones(1))
    sol = solve_qp(prob)
    bad = type(sol)(sol.z, sol.lambda_eq, np.array([-0.5]), sol.objective,
                    sol.status, sol.active_set)
    assert verify_kkt(prob, bad).dual_feas_violation == pytest.approx(0.5)


def _random_box_qp(rng, n, m_boxes):
    L = rng.normal(size=(n, n))
    P = L @ L.T + 0.05 * np.eye(n)
    q = rng.normal(size=n) * 2
    idx = rng.choice(n, size=m_boxes, replace=False)
    rows = []
    rhs = []
    for i in idx:
        sign = rng.choice([-1.0, 1.0])
        row = np.zeros(n)
        row[i] = sign
        rows.append(row)
        rhs.append(sign * rng.normal() * 0.5)
    return QpProblem(P, q, np.zeros((0, n)), np.zeros(0), np.vstack(rows), np.array(rhs))


def test_random_qps_match_enumeration_oracle():
    rng = np.random.default_rng(1234)
    for _ in range(120):
        n = int(rng.integers(2, 7))
        m = int(rng.integers(1, min(n, 4) + 1))
        prob = _random_box_qp(rng, n, m)
        sol = solve_qp(prob)
        oracle = enumerate_active_sets(prob)
        assert sol.status is QpStatus.OPTIMAL
        assert oracle is not None
        assert np.abs(sol.z - oracle[1]).max() <= 1e-8 * (1 + np.abs(oracle[1]).max())
        assert verify_kkt(prob, sol).max_residual() <= 1e-9 * (1 + abs(sol.objective))


def test_strong_duality_at_optimum():
    rng = np.random.default_rng(5)
    for _ in range(25):
        prob = _random_box_qp(rng, 4, 3)
        sol = solve_qp(prob)
        # Lagrangian dual value at the reported multipliers.
        grad = prob.q + prob.A_in.T @ sol.mu_in
        z_min = np.linalg.solve(prob.P, -grad)
        dual = (0.5 * z_min @ prob.P @ z_min + grad @ z_min - sol.mu_in @ prob.b_in)
        assert sol.objective - dual <= 1e-8 * (1 + abs(sol.objective))


@given(st.floats(min_value=0.1, max_value=100.0))
@settings(max_examples=30, deadline=None)
def test_row_scaling_invariance(c):
    P = np.diag([2.0, 1.0])
    q = np.array([-1.0, -1.0])
    A_in = np.array([[1.0, 1.0], [-1.0, 0.0]])
    b_in = np.array([0.5, 0.0])
    base = solve_qp(QpProblem(P, q, np.zeros((0, 2)), np.zeros(0), A_in, b_in))
    scaled_rows = A_in.copy()
    scaled_rhs = b_in.copy()
    scaled_rows[0] *= c
    scaled_rhs[0] *= c
    scaled = solve_qp(QpProblem(P, q, np.zeros((0, 2)), np.zeros(0), scaled_rows, scaled_rhs))
    assert np.abs(base.z - scaled.z).max() <= 1e-7
    assert scaled.mu_in[0] == pytest.approx(base.mu_in[0] / c, rel=1e-6, abs=1e-9)


def test_constraint_permutation_invariance():
    rng = np.random.default_rng(77)
    prob = _random_box_qp(rng, 5, 4)
    sol = solve_qp(prob)
    perm = [2, 0, 3, 1]
    perm_prob = QpProblem(prob.P, prob.q, prob.A_eq, prob.b_eq,
                          prob.A_in[perm], prob.b_in[perm])
    perm_sol = solve_qp(perm_prob)
    assert np.abs(sol.z - perm_sol.z).max() <= 1e-8
    assert np.abs(sol.mu_in[perm] - perm_sol.mu_in).max() <= 1e-7


def test_warm_start_active_set():
    rng = np.random.default_rng(9)
    prob = _random_box_qp(rng, 5, 4)
    cold = solve_qp(prob)
    warm = solve_qp(prob, start_active=sorted(cold.active_set))
    assert np.abs(cold.z - warm.z).max() <= 1e-9
    assert warm.iterations <= cold.iterations

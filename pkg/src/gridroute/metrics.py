"""Social-cost metrics, capacity sensitivities, BP screening, and sweeps.

A generalized Braess paradox is a strict-sign event on a derivative of a
social cost with respect to a capacity parameter: decreasing congestion
slope alpha_l expands a road, increasing f_cap_l expands a line. Derivatives
come either from central finite differences on re-solved equilibria or from
differentiating the reduced KKT system of the joint program at a fixed
binding pattern.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from . import model
from .equilibrium import (
    BindingPattern,
    GueSolution,
    classify_pattern,
    social_cost_values,
    solve_gue,
)
from .errors import DegeneratePattern, InvalidRange, ParseError
from .model import CoupledSystem

VERDICT_KINDS = ("TT", "TP", "TC", "PT", "PP", "PC")


@dataclass(frozen=True)
class Param:
    """Capacity parameter address: alpha:<link>, fbar:<row>, rho, qscale."""

    kind: str
    index: int | None = None

    def __post_init__(self):
        if self.kind not in ("alpha", "fbar", "rho", "qscale"):
            raise ValueError(f"unknown parameter kind '{self.kind}'")
        if self.kind in ("alpha", "fbar") and self.index is None:
            raise ValueError(f"'{self.kind}' needs an index")

    def __str__(self):
        return self.kind if self.index is None else f"{self.kind}:{self.index}"

    @classmethod
    def parse(cls, text: str) -> "Param":
        parts = text.split(":")
        if parts[0] in ("rho", "qscale") and len(parts) == 1:
            return cls(parts[0])
        if parts[0] in ("alpha", "fbar") and len(parts) == 2:
            try:
                return cls(parts[0], int(parts[1]))
            except ValueError:
                pass
        raise ParseError(f"cannot parse parameter '{text}' (want alpha:<l>, fbar:<l>, rho, qscale)")


def param_value(sys: CoupledSystem, param: Param) -> float:
    if param.kind == "alpha":
        return float(sys.transport.alpha[param.index])
    if param.kind == "fbar":
        return float(sys.power.f_cap[param.index])
    if param.kind == "rho":
        return sys.coupling.rho
    return 1.0  # qscale is a multiplier on the current q_diag


def apply_param(sys: CoupledSystem, param: Param, theta: float) -> CoupledSystem:
    if param.kind == "alpha":
        return model.with_alpha(sys, param.index, theta)
    if param.kind == "fbar":
        return model.with_fbar(sys, param.index, theta)
    if param.kind == "rho":
        return model.with_rho(sys, theta)
    return model.with_q_scale(sys, theta)


@dataclass(frozen=True)
class SocialCosts:
    phi_t: float
    phi_p: float
    phi_c: float


def social_costs(sys: CoupledSystem, gue: GueSolution) -> SocialCosts:
    """Phi_T (travel cost only), Phi_P (dispatch cost), and their sum."""
    return SocialCosts(*social_cost_values(sys, gue))


@dataclass(frozen=True)
class SensitivityRow:
    parameter: Param
    dphi_t: float
    dphi_p: float
    dphi_c: float
    method: str  # "fd" or "kkt"
    at_region_boundary: bool = False


def derivative_fd(sys: CoupledSystem, param: Param, step: float | None = None,
                  solver=solve_gue) -> SensitivityRow:
    """Central finite difference of all three social costs.

    Flags the row when the binding pattern differs between theta-h and
    theta+h (the derivative may not exist there).
    """
    theta = param_value(sys, param)
    h = step if step is not None else 1e-5 * (1.0 + abs(theta))
    lo_sys = apply_param(sys, param, theta - h)
    hi_sys = apply_param(sys, param, theta + h)
    lo = solver(lo_sys)
    hi = solver(hi_sys)
    lo_phi = social_cost_values(lo_sys, lo)
    hi_phi = social_cost_values(hi_sys, hi)
    dt = (hi_phi[0] - lo_phi[0]) / (2 * h)
    dp = (hi_phi[1] - lo_phi[1]) / (2 * h)
    boundary = (
        lo.binding.key() != hi.binding.key()
        or lo.binding.degenerate
        or hi.binding.degenerate
    )
    return SensitivityRow(param, dt, dp, dt + dp, "fd", boundary)


def _reduced_kkt(sys: CoupledSystem, gue: GueSolution):
    """Assemble the KKT system of the joint program at the binding pattern.

    Returns (K, layout) where K = [[P, A'],[A, 0]] stacks all equalities and
    the binding inequalities, and layout records which block is where.
    """
    t, pw, c = sys.transport, sys.power, sys.coupling
    n_r, n_p = t.n_routes, pw.n_buses
    n = n_r + 2 * n_p
    P = np.zeros((n, n))
    P[:n_r, :n_r] = t.route_quadratic()
    P[n_r : n_r + n_p, n_r : n_r + n_p] = np.diag(pw.q_diag)
    rb = c.route_bus_matrix()
    rows = [np.hstack([c.rho * rb, -np.eye(n_p), np.eye(n_p)])]
    inj = np.zeros(n)
    inj[n_r + n_p :] = 1.0
    rows.append(inj[None, :])
    for routes, _ in sys.od_groups():
        row = np.zeros(n)
        row[list(routes)] = 1.0
        rows.append(row[None, :])
    fixed = np.flatnonzero(~pw.dispatchable)
    for i in fixed:
        row = np.zeros(n)
        row[n_r + i] = 1.0
        rows.append(row[None, :])
    congested = sorted(gue.binding.congested_lines)
    for l in congested:
        row = np.zeros(n)
        row[n_r + n_p :] = pw.shift_factor[l]
        rows.append(row[None, :])
    zero_routes = sorted(gue.binding.zero_routes)
    for r in zero_routes:
        row = np.zeros(n)
        row[r] = -1.0
        rows.append(row[None, :])
    bound_gens = []
    if pw.enforce_nonneg_gen:
        demand = sum(d for _, d in sys.od_groups())
        scale = max(abs(gue.dispatch.g).max(), c.rho * demand, 1.0)
        bound_gens = [
            int(i)
            for i in np.flatnonzero(pw.dispatchable)
            if abs(gue.dispatch.g[i]) <= 1e-9 * scale
        ]
        for i in bound_gens:
            row = np.zeros(n)
            row[n_r + i] = -1.0
            rows.append(row[None, :])
    A = np.vstack(rows)
    m_a = A.shape[0]
    K = np.zeros((n + m_a, n + m_a))
    K[:n, :n] = P
    K[:n, n:] = A.T
    K[n:, :n] = A
    layout = {
        "n": n, "n_r": n_r, "n_p": n_p,
        "congested": congested, "zero_routes": zero_routes, "bound_gens": bound_gens,
        "n_eq_rows": m_a - len(congested) - len(zero_routes) - len(bound_gens),
    }
    return K, layout


def derivative_kkt(sys: CoupledSystem, gue: GueSolution, param: Param) -> SensitivityRow:
    """Implicit-function-theorem sensitivity at the equilibrium's pattern.

    Differentiates the reduced (binding-pattern-fixed) KKT system of the
    joint program, then assembles the social-cost derivatives from dx and
    the envelope terms. Degenerate patterns abort rather than regularize.
    """
    if param.kind not in ("alpha", "fbar"):
        raise InvalidRange("KKT sensitivities are defined for alpha and fbar parameters")
    if gue.binding.degenerate:
        raise DegeneratePattern("binding pattern is ambiguous at tolerance")
    t, pw, c = sys.transport, sys.power, sys.coupling
    n_r, n_p = t.n_routes, pw.n_buses
    x, lmp, eta = gue.x, gue.dispatch.lmp, gue.dispatch.eta

    if param.kind == "fbar":
        l = param.index
        if l not in gue.binding.congested_lines:
            return SensitivityRow(param, 0.0, 0.0, 0.0, "kkt", False)

    K, layout = _reduced_kkt(sys, gue)
    n = layout["n"]
    rhs = np.zeros(K.shape[0])
    if param.kind == "alpha":
        a_l = t.link_route[param.index]
        rhs[:n_r] = -a_l * float(a_l @ x)
    else:
        pos = n + layout["n_eq_rows"] + layout["congested"].index(param.index)
        rhs[pos] = 1.0

    sol, residual, rank, _ = np.linalg.lstsq(K, rhs, rcond=None)
    if rank < K.shape[0]:
        raise DegeneratePattern("reduced KKT system is singular at this pattern")
    dz = sol[:n]
    dx = dz[:n_r]

    # Side condition of the derivative formulas: c(x, lambda)' dx = 0.
    scale = np.linalg.norm(gue.route_cost) * np.linalg.norm(dx)
    if abs(gue.route_cost @ dx) > 1e-6 * max(scale, 1e-12):
        raise DegeneratePattern("equilibrium cost condition violated; pattern unreliable")

    grad_t = 2 * t.route_quadratic() @ x + t.route_fixed_cost()
    dd = c.rho * (c.route_bus_matrix() @ dx)
    if param.kind == "alpha":
        explicit = float(a_l @ x) ** 2
        dphi_t = explicit + float(grad_t @ dx)
        dphi_p = float(lmp @ dd)
    else:
        dphi_t = float(grad_t @ dx)
        dphi_p = float(lmp @ dd) - float(eta[param.index])
    return SensitivityRow(param, dphi_t, dphi_p, dphi_t + dphi_p, "kkt", False)


@dataclass(frozen=True)
class BpReport:
    rows: tuple[SensitivityRow, ...]
    verdicts: dict[str, tuple[str, ...]]
    baseline: SocialCosts
    failures: tuple[tuple[str, str], ...] = ()

    def occurs(self, kind: str) -> bool:
        return bool(self.verdicts.get(kind))


def _verdicts(rows, baseline: SocialCosts) -> dict[str, tuple[str, ...]]:
    tol_t = 1e-6 * (1.0 + abs(baseline.phi_t))
    tol_p = 1e-6 * (1.0 + abs(baseline.phi_p))
    tol_c = 1e-6 * (1.0 + abs(baseline.phi_c))
    found: dict[str, list[str]] = {k: [] for k in VERDICT_KINDS}
    for row in rows:
        if row.at_region_boundary:
            continue
        name = str(row.parameter)
        if row.parameter.kind == "alpha":
            if row.dphi_t < -tol_t:
                found["TT"].append(name)
            if row.dphi_p < -tol_p:
                found["TP"].append(name)
            if row.dphi_c < -tol_c:
                found["TC"].append(name)
        elif row.parameter.kind == "fbar":
            if row.dphi_t > tol_t:
                found["PT"].append(name)
            if row.dphi_p > tol_p:
                found["PP"].append(name)
            if row.dphi_c > tol_c:
                found["PC"].append(name)
    return {k: tuple(dict.fromkeys(v)) for k, v in found.items()}


def screen_bp(sys: CoupledSystem, method: str = "kkt", solver=solve_gue) -> BpReport:
    """One sensitivity row per capacity parameter, plus BP verdicts."""
    if method not in ("fd", "kkt", "both"):
        raise InvalidRange("method must be fd, kkt, or both")
    gue = solver(sys)
    baseline = social_costs(sys, gue)
    rows: list[SensitivityRow] = []
    failures: list[tuple[str, str]] = []
    params = [Param("alpha", l) for l in range(sys.transport.n_links)] + [
        Param("fbar", l) for l in range(sys.power.n_flow_constraints)
    ]
    for param in params:
        if method in ("kkt", "both"):
            try:
                rows.append(derivative_kkt(sys, gue, param))
            except Exception as exc:  # noqa: BLE001 - recorded, not fatal
                failures.append((str(param), f"kkt: {exc}"))
        if method in ("fd", "both"):
            try:
                rows.append(derivative_fd(sys, param, solver=solver))
            except Exception as exc:  # noqa: BLE001
                failures.append((str(param), f"fd: {exc}"))
    return BpReport(tuple(rows), _verdicts(rows, baseline), baseline, tuple(failures))


@dataclass(frozen=True)
class SweepRow:
    theta: float
    x: np.ndarray
    lmp: np.ndarray
    phi_t: float
    phi_p: float
    phi_c: float
    pattern: BindingPattern
    boundary: bool
    error: str | None = None


@dataclass(frozen=True)
class SweepTable:
    parameter: Param
    rows: tuple[SweepRow, ...]

    def switch_points(self) -> list[float]:
        return [row.theta for row in self.rows if row.boundary]


def sweep(sys: CoupledSystem, param: Param, lo: float, hi: float, n_steps: int,
          solver=solve_gue) -> SweepTable:
    """Solve along a parameter grid; flag rows where the pattern switches."""
    if not (lo < hi) or n_steps < 2:
        raise InvalidRange("need lo < hi and at least two steps")
    thetas = np.linspace(lo, hi, n_steps)
    rows: list[SweepRow] = []
    prev_key = None
    for theta in thetas:
        s = apply_param(sys, param, float(theta))
        try:
            gue = solver(s)
        except Exception as exc:  # noqa: BLE001 - per-row failures recorded
            rows.append(SweepRow(float(theta), np.array([]), np.array([]),
                                 np.nan, np.nan, np.nan,
                                 BindingPattern(frozenset(), frozenset()), False, str(exc)))
            prev_key = None
            continue
        phi_t, phi_p, phi_c = social_cost_values(s, gue)
        key = gue.binding.key()
        boundary = prev_key is not None and key != prev_key
        prev_key = key
        rows.append(SweepRow(float(theta), gue.x, gue.dispatch.lmp,
                             phi_t, phi_p, phi_c, gue.binding, boundary))
    return SweepTable(param, tuple(rows))


# ---------------------------------------------------------------------------
# CSV emission (single schema shared by sweeps and screens)
# ---------------------------------------------------------------------------

CSV_HEADER = "param,theta,phi_t,phi_p,phi_c,dphi_t,dphi_p,dphi_c,method,boundary,verdicts"


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and not np.isfinite(v)):
        return ""
    return f"{v:.12g}"


def sweep_to_csv(table: SweepTable) -> str:
    buf = io.StringIO()
    buf.write(CSV_HEADER + "\n")
    for row in table.rows:
        cells = [str(table.parameter), _fmt(row.theta), _fmt(row.phi_t), _fmt(row.phi_p),
                 _fmt(row.phi_c), "", "", "", "", "1" if row.boundary else "0",
                 row.error or ""]
        buf.write(",".join(cells) + "\n")
    return buf.getvalue()


def screen_to_csv(report: BpReport) -> str:
    buf = io.StringIO()
    buf.write(CSV_HEADER + "\n")
    verdict_of_param: dict[str, list[str]] = {}
    for kind, params in report.verdicts.items():
        for p in params:
            verdict_of_param.setdefault(p, []).append(kind)
    for row in report.rows:
        name = str(row.parameter)
        kinds = ";".join(sorted(verdict_of_param.get(name, [])))
        cells = [name, "", _fmt(report.baseline.phi_t), _fmt(report.baseline.phi_p),
                 _fmt(report.baseline.phi_c), _fmt(row.dphi_t), _fmt(row.dphi_p),
                 _fmt(row.dphi_c), row.method, "1" if row.at_region_boundary else "0", kinds]
        buf.write(",".join(cells) + "\n")
    return buf.getvalue()

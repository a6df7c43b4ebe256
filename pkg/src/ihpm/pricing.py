"""Uplift pricing on top of a dispatch: minimal side payments restoring cost
recovery per energy vector, revenue-neutral within each vector.

The pricing program is a linear program over corrected prices, eight uplift
rate families (payments and charges for users and generators on each vector),
and the agents' utilities. Marginal costs are frozen at the dispatch point.
Because the LP can have many optima, prices are tie-broken by a second solve
that minimizes the L1 deviation of the corrected prices from the dispatch
duals while holding the uplift bill at its minimum.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .dispatch import DispatchSolution, Infeasible, SolverFailure
from .model import MarketInstance, marginal_costs
from .qpsolver import NumericalFailure, QuadraticProgram, solve_qp

__all__ = [
    "PricingSolution",
    "SettlementReport",
    "SettlementRow",
    "VectorTotals",
    "build_pm",
    "settle",
    "solve_pm",
]

Mode = Literal["per-vector", "net"]

# Neutrality and settlement balances must close within this many dollars.
BALANCE_TOL = 1e-6
# Utilities may undershoot zero by at most this much (solver dust).
UTILITY_SLACK = 1e-9


@dataclass(frozen=True)
class PricingSolution:
    mode: Mode
    price_electricity: float  # corrected electricity price, $/MWh
    price_heat: float  # corrected heat price, $/MWh
    demand_uplift_paid: dict[str, float]  # u_pd per dispatched electric user
    demand_uplift_charged: dict[str, float]  # u_cd
    heat_demand_uplift_paid: dict[str, float]  # v_pd per dispatched heat user
    heat_demand_uplift_charged: dict[str, float]  # v_cd
    generation_uplift_paid: dict[str, float]  # u_pg per dispatched power generator
    generation_uplift_charged: dict[str, float]  # u_cg
    heat_generation_uplift_paid: dict[str, float]  # v_pg per dispatched heat generator
    heat_generation_uplift_charged: dict[str, float]  # v_cg
    demand_utility: dict[str, float]  # Psi
    heat_demand_utility: dict[str, float]  # Phi
    electric_profit: dict[str, float]  # Pi
    heat_profit: dict[str, float]  # Theta
    uplift_objective: float  # total uplift payments, $
    settlement_welfare: float  # sum of post-pricing utilities, $


@dataclass(frozen=True)
class SettlementRow:
    agent: str
    side: Literal["demand", "generation"]
    vector: Literal["electricity", "heat"]
    quantity: float  # MWh
    price: float  # corrected price, $/MWh
    uplift_paid: float  # $/MWh
    uplift_charged: float  # $/MWh
    money_flow: float  # $ received by the agent (users are negative)
    surplus: float  # $


@dataclass(frozen=True)
class VectorTotals:
    vector: Literal["electricity", "heat"]
    collected: float  # $ paid in by users
    disbursed: float  # $ paid out to generators
    residual: float  # collected - disbursed


@dataclass(frozen=True)
class SettlementReport:
    rows: tuple[SettlementRow, ...]
    totals: tuple[VectorTotals, VectorTotals]
    neutrality_electricity: float
    neutrality_heat: float
    recovery_before: dict[tuple[str, str], bool]  # (generator, vector) -> verdict
    recovery_after: dict[tuple[str, str], bool]
    settlement_welfare: float


class _PmLayout:
    """Variable/row bookkeeping shared by the build and extraction steps."""

    def __init__(self, inst: MarketInstance, dispatch: DispatchSolution, mode: Mode):
        if mode not in ("per-vector", "net"):
            raise ValueError(f"unknown pricing mode {mode!r}")
        self.mode = mode
        # Preserve instance ordering for determinism.
        self.users_e = [b for b in inst.electric_demands if b.id in dispatch.dispatched_electric_demands]
        self.users_h = [b for b in inst.heat_demands if b.id in dispatch.dispatched_heat_demands]
        self.gens_e = [g for g in inst.generators if g.id in dispatch.dispatched_electric_generators]
        self.gens_h = [g for g in inst.generators if g.id in dispatch.dispatched_heat_generators]
        self.has_electric = bool(self.users_e or self.gens_e)
        self.has_heat = bool(self.users_h or self.gens_h)
        self.marginal_e = {}
        self.marginal_h = {}
        for gen in inst.generators:
            m_p, m_h = marginal_costs(gen, *dispatch.generation(gen.id))
            self.marginal_e[gen.id] = m_p
            self.marginal_h[gen.id] = m_h

        self.names: list[str] = []
        self.col: dict[str, int] = {}
        if self.has_electric:
            self._add("lambda_pm")
        if self.has_heat:
            self._add("gamma_pm")
        for b in self.users_e:
            self._add(f"u_pd[{b.id}]")
            self._add(f"u_cd[{b.id}]")
        for b in self.users_h:
            self._add(f"v_pd[{b.id}]")
            self._add(f"v_cd[{b.id}]")
        for g in self.gens_e:
            self._add(f"u_pg[{g.id}]")
            self._add(f"u_cg[{g.id}]")
        for g in self.gens_h:
            self._add(f"v_pg[{g.id}]")
            self._add(f"v_cg[{g.id}]")
        for b in self.users_e:
            self._add(f"psi[{b.id}]")
        for b in self.users_h:
            self._add(f"phi[{b.id}]")
        for g in self.gens_e:
            self._add(f"pi[{g.id}]")
        for g in self.gens_h:
            self._add(f"theta[{g.id}]")
        self.n = len(self.names)

    def _add(self, name: str) -> int:
        self.col[name] = len(self.names)
        self.names.append(name)
        return self.col[name]


def build_pm(inst: MarketInstance, dispatch: DispatchSolution, mode: Mode = "per-vector") -> QuadraticProgram:
    """Assemble the pricing LP over the dispatched agents.

    Utility variables are defined by equality rows; nonnegativity of uplift
    rates, prices, and utilities (per vector, or combined generator profit in
    ``net`` mode) are inequality rows. The objective is the total uplift
    payment bill.
    """
    lay = _PmLayout(inst, dispatch, mode)
    n = lay.n
    col = lay.col
    d = dispatch.electric_demand
    q = dispatch.heat_demand
    p = dispatch.electric_generation
    h = dispatch.heat_generation

    c = np.zeros(n)
    for b in lay.users_e:
        c[col[f"u_pd[{b.id}]"]] = d[b.id]
    for b in lay.users_h:
        c[col[f"v_pd[{b.id}]"]] = q[b.id]
    for g in lay.gens_e:
        c[col[f"u_pg[{g.id}]"]] = p[g.id]
    for g in lay.gens_h:
        c[col[f"v_pg[{g.id}]"]] = h[g.id]

    eq_rows: list[np.ndarray] = []
    eq_rhs: list[float] = []
    eq_names: list[str] = []

    if lay.has_electric:
        row = np.zeros(n)
        for b in lay.users_e:
            row[col[f"u_pd[{b.id}]"]] = d[b.id]
            row[col[f"u_cd[{b.id}]"]] = -d[b.id]
        for g in lay.gens_e:
            row[col[f"u_pg[{g.id}]"]] = p[g.id]
            row[col[f"u_cg[{g.id}]"]] = -p[g.id]
        eq_rows.append(row)
        eq_rhs.append(0.0)
        eq_names.append("neutrality_electricity")
    if lay.has_heat:
        row = np.zeros(n)
        for b in lay.users_h:
            row[col[f"v_pd[{b.id}]"]] = q[b.id]
            row[col[f"v_cd[{b.id}]"]] = -q[b.id]
        for g in lay.gens_h:
            row[col[f"v_pg[{g.id}]"]] = h[g.id]
            row[col[f"v_cg[{g.id}]"]] = -h[g.id]
        eq_rows.append(row)
        eq_rhs.append(0.0)
        eq_names.append("neutrality_heat")

    # Utility definitions: psi_i = d_i (b_i - lambda_pm + u_pd - u_cd), etc.
    for b in lay.users_e:
        row = np.zeros(n)
        row[col[f"psi[{b.id}]"]] = 1.0
        row[col["lambda_pm"]] = d[b.id]
        row[col[f"u_pd[{b.id}]"]] = -d[b.id]
        row[col[f"u_cd[{b.id}]"]] = d[b.id]
        eq_rows.append(row)
        eq_rhs.append(d[b.id] * b.bid)
        eq_names.append(f"psi_def[{b.id}]")
    for b in lay.users_h:
        row = np.zeros(n)
        row[col[f"phi[{b.id}]"]] = 1.0
        row[col["gamma_pm"]] = q[b.id]
        row[col[f"v_pd[{b.id}]"]] = -q[b.id]
        row[col[f"v_cd[{b.id}]"]] = q[b.id]
        eq_rows.append(row)
        eq_rhs.append(q[b.id] * b.bid)
        eq_names.append(f"phi_def[{b.id}]")
    for g in lay.gens_e:
        row = np.zeros(n)
        row[col[f"pi[{g.id}]"]] = 1.0
        row[col["lambda_pm"]] = -p[g.id]
        row[col[f"u_pg[{g.id}]"]] = -p[g.id]
        row[col[f"u_cg[{g.id}]"]] = p[g.id]
        eq_rows.append(row)
        eq_rhs.append(-p[g.id] * lay.marginal_e[g.id])
        eq_names.append(f"pi_def[{g.id}]")
    for g in lay.gens_h:
        row = np.zeros(n)
        row[col[f"theta[{g.id}]"]] = 1.0
        row[col["gamma_pm"]] = -h[g.id]
        row[col[f"v_pg[{g.id}]"]] = -h[g.id]
        row[col[f"v_cg[{g.id}]"]] = h[g.id]
        eq_rows.append(row)
        eq_rhs.append(-h[g.id] * lay.marginal_h[g.id])
        eq_names.append(f"theta_def[{g.id}]")

    in_rows: list[np.ndarray] = []
    in_rhs: list[float] = []
    in_names: list[str] = []

    def nonneg(name: str) -> None:
        row = np.zeros(n)
        row[col[name]] = -1.0
        in_rows.append(row)
        in_rhs.append(0.0)
        in_names.append(f"nonneg[{name}]")

    for name in lay.names:
        if name.startswith(("lambda", "gamma", "u_", "v_")):
            nonneg(name)
    for b in lay.users_e:
        nonneg(f"psi[{b.id}]")
    for b in lay.users_h:
        nonneg(f"phi[{b.id}]")
    if mode == "per-vector":
        for g in lay.gens_e:
            nonneg(f"pi[{g.id}]")
        for g in lay.gens_h:
            nonneg(f"theta[{g.id}]")
    else:
        seen = []
        for g in lay.gens_e + lay.gens_h:
            if g.id in seen:
                continue
            seen.append(g.id)
            row = np.zeros(n)
            if f"pi[{g.id}]" in col:
                row[col[f"pi[{g.id}]"]] = -1.0
            if f"theta[{g.id}]" in col:
                row[col[f"theta[{g.id}]"]] = -1.0
            in_rows.append(row)
            in_rhs.append(0.0)
            in_names.append(f"profit_nonneg[{g.id}]")

    return QuadraticProgram(
        Q=np.zeros((n, n)),
        c=c,
        A=np.vstack(eq_rows) if eq_rows else np.zeros((0, n)),
        b=np.asarray(eq_rhs, dtype=float),
        G=np.vstack(in_rows) if in_rows else np.zeros((0, n)),
        u=np.asarray(in_rhs, dtype=float),
        variable_names=tuple(lay.names),
        equality_names=tuple(eq_names),
        inequality_names=tuple(in_names),
    )


def _drop_zero_columns(qp: QuadraticProgram, drop: set[str]) -> QuadraticProgram:
    """Fix the named variables to zero by deleting their columns and bound rows."""
    keep = [j for j, name in enumerate(qp.variable_names) if name not in drop]
    keep_rows = [
        k
        for k, name in enumerate(qp.inequality_names)
        if not (name.startswith("nonneg[") and name[len("nonneg[") : -1] in drop)
    ]
    return QuadraticProgram(
        Q=qp.Q[np.ix_(keep, keep)],
        c=qp.c[keep],
        A=qp.A[:, keep],
        b=qp.b,
        G=qp.G[np.ix_(keep_rows, keep)],
        u=qp.u[keep_rows],
        variable_names=tuple(qp.variable_names[j] for j in keep),
        equality_names=qp.equality_names,
        inequality_names=tuple(qp.inequality_names[k] for k in keep_rows),
    )


def _extend_for_tie_break(
    qp: QuadraticProgram, phase1_x: np.ndarray, lam: float, gam: float
) -> QuadraticProgram:
    """Phase-2 LP: minimize |price deviations| holding the uplift bill fixed.

    Deviations are split into nonnegative parts; an equality row pins the
    uplift bill at its phase-1 value. Uplift rates that are zero at the
    phase-1 optimum are eliminated first: the phase-1 solve lands in the
    relative interior of its optimal face, so a zero there is zero across the
    whole face, and removing those columns keeps the phase-2 program from
    pinching zero-width slacks (which stalls the interior-point method).
    """
    zero_rates = {
        name
        for name, v in zip(qp.variable_names, phase1_x)
        if name.startswith(("u_", "v_")) and v <= 1e-7
    }
    kept_bill = float(
        sum(w * v for name, w, v in zip(qp.variable_names, qp.c, phase1_x)
            if w != 0.0 and name not in zero_rates)
    )
    qp = _drop_zero_columns(qp, zero_rates)
    pin_bill = bool(np.any(qp.c != 0.0))
    phase1_objective = kept_bill

    names = list(qp.variable_names)
    n0 = qp.n
    extra = []
    targets = []
    if "lambda_pm" in names:
        extra += ["dev_lambda_plus", "dev_lambda_minus"]
        targets.append(("lambda_pm", lam))
    if "gamma_pm" in names:
        extra += ["dev_gamma_plus", "dev_gamma_minus"]
        targets.append(("gamma_pm", gam))
    n = n0 + len(extra)
    names += extra
    col = {name: j for j, name in enumerate(names)}

    c = np.zeros(n)
    for name in extra:
        c[col[name]] = 1.0

    me0 = qp.A.shape[0]
    A = np.zeros((me0 + len(targets) + (1 if pin_bill else 0), n))
    A[:me0, :n0] = qp.A
    b = list(qp.b)
    eq_names = list(qp.equality_names)
    for k, (price_name, price_value) in enumerate(targets):
        row = me0 + k
        A[row, col[price_name]] = 1.0
        A[row, col[f"dev_{price_name[: -3]}_plus"]] = -1.0
        A[row, col[f"dev_{price_name[: -3]}_minus"]] = 1.0
        b.append(price_value)
        eq_names.append(f"deviation[{price_name}]")
    if pin_bill:
        A[me0 + len(targets), :n0] = qp.c
        b.append(phase1_objective)
        eq_names.append("phase1_objective")

    G = np.zeros((qp.G.shape[0] + len(extra), n))
    G[: qp.G.shape[0], :n0] = qp.G
    u = list(qp.u)
    in_names = list(qp.inequality_names)
    for k, name in enumerate(extra):
        G[qp.G.shape[0] + k, col[name]] = -1.0
        u.append(0.0)
        in_names.append(f"nonneg[{name}]")

    return QuadraticProgram(
        Q=np.zeros((n, n)),
        c=c,
        A=A,
        b=np.asarray(b, dtype=float),
        G=G,
        u=np.asarray(u, dtype=float),
        variable_names=tuple(names),
        equality_names=tuple(eq_names),
        inequality_names=tuple(in_names),
    )


def _clamped(value: float, floor_slack: float = 2e-6) -> float:
    if value < -floor_slack:
        raise SolverFailure(f"uplift variable went negative ({value!r})")
    return max(0.0, float(value))


def solve_pm(
    inst: MarketInstance,
    dispatch: DispatchSolution,
    mode: Mode = "per-vector",
    tol: float = 1e-8,
) -> PricingSolution:
    """Two-phase pricing solve: minimal uplift bill, then minimal price deviation."""
    lay = _PmLayout(inst, dispatch, mode)
    qp = build_pm(inst, dispatch, mode)
    try:
        phase1 = solve_qp(qp, tol=tol)
    except NumericalFailure as exc:
        raise SolverFailure(str(exc)) from exc
    if phase1.status == "infeasible":
        raise Infeasible(
            "no revenue-neutral, non-confiscatory uplift exists: some energy "
            "vector's total marginal surplus is negative"
        )
    if phase1.status != "optimal":
        raise SolverFailure(f"pricing phase 1 ended with status {phase1.status!r}")

    qp2 = _extend_for_tie_break(
        qp, phase1.x, dispatch.price_electricity, dispatch.price_heat
    )
    try:
        phase2 = solve_qp(qp2, tol=tol)
        # The tie-break LP is degenerate by construction (its feasible set is
        # the phase-1 optimal face); when the strict solve stalls, accept a
        # residual certified at the loosest workable tolerance.
        for fallback in (max(10.0 * tol, 1e-7), max(100.0 * tol, 1e-6)):
            if phase2.status != "max_iterations":
                break
            phase2 = solve_qp(qp2, tol=fallback)
    except NumericalFailure as exc:
        raise SolverFailure(str(exc)) from exc
    if phase2.status != "optimal":
        raise SolverFailure(f"pricing phase 2 ended with status {phase2.status!r}")

    col = {name: j for j, name in enumerate(qp2.variable_names)}
    x = phase2.x

    def val(name: str) -> float:
        # Payment columns eliminated in the zero-bill case read back as zero.
        if name not in col:
            return 0.0
        return float(x[col[name]])

    lam_pm = _clamped(val("lambda_pm")) if "lambda_pm" in col else dispatch.price_electricity
    gam_pm = _clamped(val("gamma_pm")) if "gamma_pm" in col else dispatch.price_heat

    u_pd = {b.id: _clamped(val(f"u_pd[{b.id}]")) for b in lay.users_e}
    u_cd = {b.id: _clamped(val(f"u_cd[{b.id}]")) for b in lay.users_e}
    v_pd = {b.id: _clamped(val(f"v_pd[{b.id}]")) for b in lay.users_h}
    v_cd = {b.id: _clamped(val(f"v_cd[{b.id}]")) for b in lay.users_h}
    u_pg = {g.id: _clamped(val(f"u_pg[{g.id}]")) for g in lay.gens_e}
    u_cg = {g.id: _clamped(val(f"u_cg[{g.id}]")) for g in lay.gens_e}
    v_pg = {g.id: _clamped(val(f"v_pg[{g.id}]")) for g in lay.gens_h}
    v_cg = {g.id: _clamped(val(f"v_cg[{g.id}]")) for g in lay.gens_h}

    d = dispatch.electric_demand
    q = dispatch.heat_demand
    p = dispatch.electric_generation
    h = dispatch.heat_generation

    # Solver dust in the rates gets amplified by the quantities when the
    # utilities are recomputed; snap rates whose binding floor is undershot by
    # a sub-microdollar amount so the non-confiscation bounds hold exactly.
    # Each snap shifts neutrality by exactly the dollar deficit it repairs,
    # which keeps the total shift well inside the balance tolerance.
    def _snap(gap_rate: float, quantity: float) -> float:
        return gap_rate if 0.0 < gap_rate * quantity <= 1e-7 else 0.0

    for b in lay.users_e:
        gap = lam_pm - b.bid - u_pd[b.id] + u_cd[b.id]
        u_pd[b.id] += _snap(gap, d[b.id])
    for b in lay.users_h:
        gap = gam_pm - b.bid - v_pd[b.id] + v_cd[b.id]
        v_pd[b.id] += _snap(gap, q[b.id])
    if mode == "per-vector":
        for g in lay.gens_e:
            gap = lay.marginal_e[g.id] - lam_pm - u_pg[g.id] + u_cg[g.id]
            u_pg[g.id] += _snap(gap, p[g.id])
        for g in lay.gens_h:
            gap = lay.marginal_h[g.id] - gam_pm - v_pg[g.id] + v_cg[g.id]
            v_pg[g.id] += _snap(gap, h[g.id])

    psi = {
        b.id: d[b.id] * (b.bid - lam_pm + u_pd[b.id] - u_cd[b.id]) for b in lay.users_e
    }
    phi = {
        b.id: q[b.id] * (b.bid - gam_pm + v_pd[b.id] - v_cd[b.id]) for b in lay.users_h
    }
    pi = {
        g.id: p[g.id] * (lam_pm + u_pg[g.id] - u_cg[g.id] - lay.marginal_e[g.id])
        for g in lay.gens_e
    }
    theta = {
        g.id: h[g.id] * (gam_pm + v_pg[g.id] - v_cg[g.id] - lay.marginal_h[g.id])
        for g in lay.gens_h
    }

    uplift_objective = (
        sum(d[b.id] * u_pd[b.id] for b in lay.users_e)
        + sum(q[b.id] * v_pd[b.id] for b in lay.users_h)
        + sum(p[g.id] * u_pg[g.id] for g in lay.gens_e)
        + sum(h[g.id] * v_pg[g.id] for g in lay.gens_h)
    )

    solution = PricingSolution(
        mode=mode,
        price_electricity=lam_pm,
        price_heat=gam_pm,
        demand_uplift_paid=u_pd,
        demand_uplift_charged=u_cd,
        heat_demand_uplift_paid=v_pd,
        heat_demand_uplift_charged=v_cd,
        generation_uplift_paid=u_pg,
        generation_uplift_charged=u_cg,
        heat_generation_uplift_paid=v_pg,
        heat_generation_uplift_charged=v_cg,
        demand_utility=psi,
        heat_demand_utility=phi,
        electric_profit=pi,
        heat_profit=theta,
        uplift_objective=uplift_objective,
        settlement_welfare=sum(psi.values()) + sum(phi.values()) + sum(pi.values()) + sum(theta.values()),
    )
    _check_invariants(solution, lay, d, q, p, h)
    return solution


def _check_invariants(sol: PricingSolution, lay: _PmLayout, d, q, p, h) -> None:
    residual_e = sum(
        d[b.id] * (sol.demand_uplift_paid[b.id] - sol.demand_uplift_charged[b.id])
        for b in lay.users_e
    ) + sum(
        p[g.id] * (sol.generation_uplift_paid[g.id] - sol.generation_uplift_charged[g.id])
        for g in lay.gens_e
    )
    residual_h = sum(
        q[b.id] * (sol.heat_demand_uplift_paid[b.id] - sol.heat_demand_uplift_charged[b.id])
        for b in lay.users_h
    ) + sum(
        h[g.id] * (sol.heat_generation_uplift_paid[g.id] - sol.heat_generation_uplift_charged[g.id])
        for g in lay.gens_h
    )
    if abs(residual_e) > BALANCE_TOL or abs(residual_h) > BALANCE_TOL:
        raise SolverFailure(
            f"revenue neutrality violated (electric {residual_e:.3e}, heat {residual_h:.3e})"
        )
    for label, utilities in (("psi", sol.demand_utility), ("phi", sol.heat_demand_utility)):
        for agent, value in utilities.items():
            if value < -1e-7:
                raise SolverFailure(f"{label}[{agent}] is confiscatory: {value!r}")
    if sol.mode == "per-vector":
        for label, utilities in (("pi", sol.electric_profit), ("theta", sol.heat_profit)):
            for agent, value in utilities.items():
                if value < -1e-6:
                    raise SolverFailure(f"{label}[{agent}] negative in per-vector mode: {value!r}")
    else:
        combined: dict[str, float] = {}
        for agent, value in sol.electric_profit.items():
            combined[agent] = combined.get(agent, 0.0) + value
        for agent, value in sol.heat_profit.items():
            combined[agent] = combined.get(agent, 0.0) + value
        for agent, value in combined.items():
            if value < -1e-6:
                raise SolverFailure(f"net profit of {agent} negative in net mode: {value!r}")


def settle(
    inst: MarketInstance, dispatch: DispatchSolution, pricing: PricingSolution
) -> SettlementReport:
    """Per-agent money flows under the corrected prices and uplifts.

    Undispatched agents appear with zero flows. Per vector, money collected
    from users must equal money disbursed to generators.
    """
    rows: list[SettlementRow] = []
    collected = {"electricity": 0.0, "heat": 0.0}
    disbursed = {"electricity": 0.0, "heat": 0.0}

    for bid in inst.electric_demands:
        quantity = dispatch.electric_demand.get(bid.id, 0.0)
        paid = pricing.demand_uplift_paid.get(bid.id, 0.0)
        charged = pricing.demand_uplift_charged.get(bid.id, 0.0)
        payment = quantity * (pricing.price_electricity - paid + charged)
        collected["electricity"] += payment
        rows.append(
            SettlementRow(
                bid.id, "demand", "electricity", quantity, pricing.price_electricity,
                paid, charged, -payment, quantity * bid.bid - payment,
            )
        )
    for bid in inst.heat_demands:
        quantity = dispatch.heat_demand.get(bid.id, 0.0)
        paid = pricing.heat_demand_uplift_paid.get(bid.id, 0.0)
        charged = pricing.heat_demand_uplift_charged.get(bid.id, 0.0)
        payment = quantity * (pricing.price_heat - paid + charged)
        collected["heat"] += payment
        rows.append(
            SettlementRow(
                bid.id, "demand", "heat", quantity, pricing.price_heat,
                paid, charged, -payment, quantity * bid.bid - payment,
            )
        )
    for gen in inst.generators:
        p, h = dispatch.generation(gen.id)
        m_p, m_h = marginal_costs(gen, p, h)
        if gen.generates_power:
            paid = pricing.generation_uplift_paid.get(gen.id, 0.0)
            charged = pricing.generation_uplift_charged.get(gen.id, 0.0)
            receipt = p * (pricing.price_electricity + paid - charged)
            disbursed["electricity"] += receipt
            rows.append(
                SettlementRow(
                    gen.id, "generation", "electricity", p, pricing.price_electricity,
                    paid, charged, receipt, receipt - p * m_p,
                )
            )
        if gen.generates_heat:
            paid = pricing.heat_generation_uplift_paid.get(gen.id, 0.0)
            charged = pricing.heat_generation_uplift_charged.get(gen.id, 0.0)
            receipt = h * (pricing.price_heat + paid - charged)
            disbursed["heat"] += receipt
            rows.append(
                SettlementRow(
                    gen.id, "generation", "heat", h, pricing.price_heat,
                    paid, charged, receipt, receipt - h * m_h,
                )
            )

    residual_e = sum(
        dispatch.electric_demand.get(a, 0.0)
        * (pricing.demand_uplift_paid.get(a, 0.0) - pricing.demand_uplift_charged.get(a, 0.0))
        for a in dispatch.electric_demand
    ) + sum(
        dispatch.electric_generation.get(a, 0.0)
        * (pricing.generation_uplift_paid.get(a, 0.0) - pricing.generation_uplift_charged.get(a, 0.0))
        for a in dispatch.electric_generation
    )
    residual_h = sum(
        dispatch.heat_demand.get(a, 0.0)
        * (pricing.heat_demand_uplift_paid.get(a, 0.0) - pricing.heat_demand_uplift_charged.get(a, 0.0))
        for a in dispatch.heat_demand
    ) + sum(
        dispatch.heat_generation.get(a, 0.0)
        * (pricing.heat_generation_uplift_paid.get(a, 0.0) - pricing.heat_generation_uplift_charged.get(a, 0.0))
        for a in dispatch.heat_generation
    )

    recovery_before: dict[tuple[str, str], bool] = {}
    recovery_after: dict[tuple[str, str], bool] = {}
    for gen in inst.generators:
        p, h = dispatch.generation(gen.id)
        m_p, m_h = marginal_costs(gen, p, h)
        if gen.id in dispatch.dispatched_electric_generators:
            recovery_before[(gen.id, "electricity")] = (
                dispatch.price_electricity - m_p >= -1e-6
            )
            effective = (
                pricing.price_electricity
                + pricing.generation_uplift_paid.get(gen.id, 0.0)
                - pricing.generation_uplift_charged.get(gen.id, 0.0)
            )
            recovery_after[(gen.id, "electricity")] = effective - m_p >= -1e-9
        if gen.id in dispatch.dispatched_heat_generators:
            recovery_before[(gen.id, "heat")] = dispatch.price_heat - m_h >= -1e-6
            effective = (
                pricing.price_heat
                + pricing.heat_generation_uplift_paid.get(gen.id, 0.0)
                - pricing.heat_generation_uplift_charged.get(gen.id, 0.0)
            )
            recovery_after[(gen.id, "heat")] = effective - m_h >= -1e-9

    return SettlementReport(
        rows=tuple(rows),
        totals=(
            VectorTotals("electricity", collected["electricity"], disbursed["electricity"],
                         collected["electricity"] - disbursed["electricity"]),
            VectorTotals("heat", collected["heat"], disbursed["heat"],
                         collected["heat"] - disbursed["heat"]),
        ),
        neutrality_electricity=residual_e,
        neutrality_heat=residual_h,
        recovery_before=recovery_before,
        recovery_after=recovery_after,
        settlement_welfare=pricing.settlement_welfare,
    )

"""Welfare-maximizing integrated heat and power dispatch with price extraction.

Solves the joint clearing problem as a convex QP: demand values minus
quadratic generation costs, subject to a power balance, a heat balance, and
each generator's polygonal operating region. Balance-row duals become the
electricity price (lambda) and heat price (gamma); region-row duals (mu)
explain any gap between prices and marginal generation costs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .model import (
    GeneratorSpec,
    MarketInstance,
    ValidationError,
    marginal_costs,
    total_cost,
    validate_instance,
)
from .qpsolver import KKTResiduals, QuadraticProgram, SolverSolution, kkt_report, solve_qp
from .qpsolver import NumericalFailure

__all__ = [
    "DispatchSolution",
    "GeneratorRecovery",
    "Infeasible",
    "RecoveryDiagnosis",
    "RecoveryRow",
    "SolverFailure",
    "SurplusRow",
    "build_ihpd",
    "diagnose_recovery",
    "solve_ihpd",
]

# Quantities above this many MWh count as dispatched.
DISPATCHED_THRESHOLD = 1e-6
# A generator recovers its costs when price - marginal cost >= -RECOVERY_SLACK.
RECOVERY_SLACK = 1e-6


class Infeasible(RuntimeError):
    """No dispatch satisfies the balances and operating regions."""


class SolverFailure(RuntimeError):
    """The QP solve did not produce a certified optimum."""


@dataclass(frozen=True)
class SurplusRow:
    agent: str
    side: Literal["demand", "generation"]
    vector: Literal["electricity", "heat"]
    quantity: float  # MWh
    unit_value: float  # bid for demand, marginal cost for generation, $/MWh
    price: float  # $/MWh
    surplus: float  # $


@dataclass(frozen=True)
class DispatchSolution:
    label: str
    electric_demand: dict[str, float]  # d* per electric user
    heat_demand: dict[str, float]  # q* per heat user
    electric_generation: dict[str, float]  # p* per power-capable generator
    heat_generation: dict[str, float]  # h* per heat-capable generator
    price_electricity: float  # lambda, $/MWh
    price_heat: float  # gamma, $/MWh
    boundary_duals: dict[tuple[str, int], float]  # mu per (generator, bound l)
    objective_welfare: float  # bid value minus full generation cost, $
    settlement_welfare: float  # sum of marginal-price surpluses, $
    dispatched_electric_demands: frozenset[str]
    dispatched_heat_demands: frozenset[str]
    dispatched_electric_generators: frozenset[str]
    dispatched_heat_generators: frozenset[str]
    surplus_rows: tuple[SurplusRow, ...]
    kkt: KKTResiduals

    def generation(self, gen_id: str) -> tuple[float, float]:
        return (
            self.electric_generation.get(gen_id, 0.0),
            self.heat_generation.get(gen_id, 0.0),
        )


@dataclass(frozen=True)
class RecoveryRow:
    generator: str
    vector: Literal["electricity", "heat"]
    marginal_cost: float
    price: float
    gap: float  # price - marginal cost
    recovered: bool


@dataclass(frozen=True)
class GeneratorRecovery:
    generator: str
    active_bounds: tuple[int, ...]
    bound_classes: dict[int, str]  # Fig-style label per active bound
    mu_weighted_kp: float  # sum_l mu[g,l] * kp[g,l]
    mu_weighted_kh: float  # sum_l mu[g,l] * kh[g,l]
    electric: RecoveryRow | None
    heat: RecoveryRow | None


@dataclass(frozen=True)
class RecoveryDiagnosis:
    generators: tuple[GeneratorRecovery, ...]

    @property
    def any_failure(self) -> bool:
        return any(
            row is not None and not row.recovered
            for rec in self.generators
            for row in (rec.electric, rec.heat)
        )

    def failures(self) -> list[RecoveryRow]:
        return [
            row
            for rec in self.generators
            for row in (rec.electric, rec.heat)
            if row is not None and not row.recovered
        ]


class _Layout:
    """Column/row bookkeeping for the dispatch QP."""

    def __init__(self, inst: MarketInstance):
        self.inst = inst
        self.d_col: dict[str, int] = {}
        self.q_col: dict[str, int] = {}
        self.p_col: dict[str, int] = {}
        self.h_col: dict[str, int] = {}
        names: list[str] = []
        for bid in inst.electric_demands:
            self.d_col[bid.id] = len(names)
            names.append(f"d[{bid.id}]")
        for bid in inst.heat_demands:
            self.q_col[bid.id] = len(names)
            names.append(f"q[{bid.id}]")
        for gen in inst.generators:
            if gen.generates_power:
                self.p_col[gen.id] = len(names)
                names.append(f"p[{gen.id}]")
            if gen.generates_heat:
                self.h_col[gen.id] = len(names)
                names.append(f"h[{gen.id}]")
        self.variable_names = tuple(names)
        self.n = len(names)


def build_ihpd(inst: MarketInstance) -> QuadraticProgram:
    """Assemble the dispatch QP (negated welfare, constant costs omitted).

    Variables are the demand quantities followed by each generator's outputs.
    Equality rows are the power balance then the heat balance; inequality
    rows are the region bounds per (generator, l), demand upper bounds, then
    demand nonnegativity.
    """
    violations = validate_instance(inst)
    if violations:
        raise ValidationError(violations)

    lay = _Layout(inst)
    n = lay.n
    Q = np.zeros((n, n))
    c = np.zeros(n)

    for bid in inst.electric_demands:
        c[lay.d_col[bid.id]] = -bid.bid
    for bid in inst.heat_demands:
        c[lay.q_col[bid.id]] = -bid.bid
    for gen in inst.generators:
        jp = lay.p_col.get(gen.id)
        jh = lay.h_col.get(gen.id)
        if jp is not None:
            Q[jp, jp] = 2.0 * gen.cost.c2p
            c[jp] = gen.cost.c1p
        if jh is not None:
            Q[jh, jh] = 2.0 * gen.cost.c2h
            c[jh] = gen.cost.c1h
        if jp is not None and jh is not None:
            Q[jp, jh] = gen.cost.chp
            Q[jh, jp] = gen.cost.chp

    A = np.zeros((2, n))
    for bid in inst.electric_demands:
        A[0, lay.d_col[bid.id]] = 1.0
    for col in lay.p_col.values():
        A[0, col] = -1.0
    for bid in inst.heat_demands:
        A[1, lay.q_col[bid.id]] = 1.0
    for col in lay.h_col.values():
        A[1, col] = -1.0
    b = np.zeros(2)
    equality_names = ("power_balance", "heat_balance")

    rows: list[np.ndarray] = []
    rhs: list[float] = []
    inequality_names: list[str] = []

    for gen in inst.generators:
        for l, hs in enumerate(gen.region.bounds, start=1):
            row = np.zeros(n)
            if gen.id in lay.p_col:
                row[lay.p_col[gen.id]] = hs.kp
            if gen.id in lay.h_col:
                row[lay.h_col[gen.id]] = hs.kh
            rows.append(row)
            rhs.append(hs.k0)
            inequality_names.append(f"region[{gen.id},{l}]")
    for bid in inst.electric_demands:
        row = np.zeros(n)
        row[lay.d_col[bid.id]] = 1.0
        rows.append(row)
        rhs.append(bid.max_quantity)
        inequality_names.append(f"d_ub[{bid.id}]")
    for bid in inst.heat_demands:
        row = np.zeros(n)
        row[lay.q_col[bid.id]] = 1.0
        rows.append(row)
        rhs.append(bid.max_quantity)
        inequality_names.append(f"q_ub[{bid.id}]")
    for bid in inst.electric_demands:
        row = np.zeros(n)
        row[lay.d_col[bid.id]] = -1.0
        rows.append(row)
        rhs.append(0.0)
        inequality_names.append(f"d_lb[{bid.id}]")
    for bid in inst.heat_demands:
        row = np.zeros(n)
        row[lay.q_col[bid.id]] = -1.0
        rows.append(row)
        rhs.append(0.0)
        inequality_names.append(f"q_lb[{bid.id}]")

    return QuadraticProgram(
        Q=Q,
        c=c,
        A=A,
        b=b,
        G=np.vstack(rows) if rows else np.zeros((0, n)),
        u=np.asarray(rhs, dtype=float),
        variable_names=lay.variable_names,
        equality_names=equality_names,
        inequality_names=tuple(inequality_names),
    )


def _audit_balance_sign(
    candidates: list[tuple[float, float]], raw_dual: float, tol: float = 1e-5
) -> float:
    """Pick the sign of a balance dual that satisfies the stationarity identities.

    ``candidates`` holds (marginal_cost + mu-weighted bound term) pairs as
    (value_for_positive_sign, scale); the identity requires
    price = marginal_cost + sum_l mu*K for every generator on that vector.
    """
    if not candidates:
        return raw_dual
    scale = max(1.0, abs(raw_dual), max(abs(v) for v, _ in candidates))
    for sign in (1.0, -1.0):
        price = sign * raw_dual
        if all(abs(price - v) <= tol * scale for v, _ in candidates):
            return price
    raise SolverFailure(
        "balance dual fails the stationarity identity under either sign "
        f"(raw={raw_dual!r}, candidates={[v for v, _ in candidates]!r})"
    )


def solve_ihpd(inst: MarketInstance, tol: float = 1e-8) -> DispatchSolution:
    """Solve the dispatch QP and map duals to market prices and surpluses."""
    qp = build_ihpd(inst)
    try:
        raw = solve_qp(qp, tol=tol)
    except NumericalFailure as exc:
        raise SolverFailure(str(exc)) from exc
    if raw.status == "infeasible":
        raise Infeasible(f"instance {inst.label!r} has no feasible dispatch")
    if raw.status != "optimal":
        raise SolverFailure(f"dispatch solve ended with status {raw.status!r}")

    lay = _Layout(inst)
    x = raw.x
    # The +0.0 folds IEEE negative zeros from the solver into plain zeros.
    d_star = {bid.id: float(x[lay.d_col[bid.id]]) + 0.0 for bid in inst.electric_demands}
    q_star = {bid.id: float(x[lay.q_col[bid.id]]) + 0.0 for bid in inst.heat_demands}
    p_star = {gid: float(x[col]) + 0.0 for gid, col in lay.p_col.items()}
    h_star = {gid: float(x[col]) + 0.0 for gid, col in lay.h_col.items()}

    mu: dict[tuple[str, int], float] = {}
    for k, name in enumerate(qp.inequality_names):
        if name.startswith("region["):
            gid, l = name[len("region[") : -1].rsplit(",", 1)
            mu[(gid, int(l))] = max(0.0, float(raw.z[k]))

    def outputs(gen: GeneratorSpec) -> tuple[float, float]:
        return p_star.get(gen.id, 0.0), h_star.get(gen.id, 0.0)

    # Fix dual signs against the stationarity identities rather than trusting
    # a solver convention.
    power_checks = []
    heat_checks = []
    for gen in inst.generators:
        p, h = outputs(gen)
        m_p, m_h = marginal_costs(gen, p, h)
        kp_term = sum(mu[(gen.id, l)] * hs.kp for l, hs in enumerate(gen.region.bounds, 1))
        kh_term = sum(mu[(gen.id, l)] * hs.kh for l, hs in enumerate(gen.region.bounds, 1))
        if gen.generates_power:
            power_checks.append((m_p + kp_term, max(1.0, abs(m_p))))
        if gen.generates_heat:
            heat_checks.append((m_h + kh_term, max(1.0, abs(m_h))))
    lam = _audit_balance_sign(power_checks, float(raw.y[0]))
    gam = _audit_balance_sign(heat_checks, float(raw.y[1]))

    surplus_rows: list[SurplusRow] = []
    for bid in inst.electric_demands:
        q = d_star[bid.id]
        surplus_rows.append(
            SurplusRow(bid.id, "demand", "electricity", q, bid.bid, lam, q * (bid.bid - lam))
        )
    for bid in inst.heat_demands:
        q = q_star[bid.id]
        surplus_rows.append(
            SurplusRow(bid.id, "demand", "heat", q, bid.bid, gam, q * (bid.bid - gam))
        )
    for gen in inst.generators:
        p, h = outputs(gen)
        m_p, m_h = marginal_costs(gen, p, h)
        if gen.generates_power:
            surplus_rows.append(
                SurplusRow(gen.id, "generation", "electricity", p, m_p, lam, p * (lam - m_p))
            )
        if gen.generates_heat:
            surplus_rows.append(
                SurplusRow(gen.id, "generation", "heat", h, m_h, gam, h * (gam - m_h))
            )

    bid_value = sum(bid.bid * d_star[bid.id] for bid in inst.electric_demands)
    bid_value += sum(bid.bid * q_star[bid.id] for bid in inst.heat_demands)
    generation_cost = sum(total_cost(gen, *outputs(gen)) for gen in inst.generators)
    objective_welfare = bid_value - generation_cost
    settlement_welfare = sum(row.surplus for row in surplus_rows)

    return DispatchSolution(
        label=inst.label,
        electric_demand=d_star,
        heat_demand=q_star,
        electric_generation=p_star,
        heat_generation=h_star,
        price_electricity=lam,
        price_heat=gam,
        boundary_duals=mu,
        objective_welfare=objective_welfare,
        settlement_welfare=settlement_welfare,
        dispatched_electric_demands=frozenset(
            k for k, v in d_star.items() if v > DISPATCHED_THRESHOLD
        ),
        dispatched_heat_demands=frozenset(
            k for k, v in q_star.items() if v > DISPATCHED_THRESHOLD
        ),
        dispatched_electric_generators=frozenset(
            k for k, v in p_star.items() if v > DISPATCHED_THRESHOLD
        ),
        dispatched_heat_generators=frozenset(
            k for k, v in h_star.items() if v > DISPATCHED_THRESHOLD
        ),
        surplus_rows=tuple(surplus_rows),
        kkt=kkt_report(qp, raw),
    )


def _classify_bound(mu_kp: float, mu_kh: float, eps: float = 1e-9) -> str:
    below_e = mu_kp < -eps
    below_h = mu_kh < -eps
    if below_e and below_h:
        return "price-below-marginal-both"
    if below_e:
        return "price-below-marginal-electricity"
    if below_h:
        return "price-below-marginal-heat"
    return "price-above-marginal"


def diagnose_recovery(
    inst: MarketInstance, sol: DispatchSolution, active_tol: float = 1e-5
) -> RecoveryDiagnosis:
    """Per-generator cost-recovery verdicts with the dual-weighted gap decomposition."""
    out: list[GeneratorRecovery] = []
    for gen in inst.generators:
        p, h = sol.generation(gen.id)
        m_p, m_h = marginal_costs(gen, p, h)
        active: list[int] = []
        classes: dict[int, str] = {}
        kp_term = 0.0
        kh_term = 0.0
        for l, hs in enumerate(gen.region.bounds, start=1):
            m = sol.boundary_duals.get((gen.id, l), 0.0)
            kp_term += m * hs.kp
            kh_term += m * hs.kh
            if abs(hs.violation(p, h)) <= active_tol * max(1.0, abs(hs.k0)):
                active.append(l)
                classes[l] = _classify_bound(m * hs.kp, m * hs.kh)
        electric = None
        if gen.id in sol.dispatched_electric_generators:
            gap = sol.price_electricity - m_p
            electric = RecoveryRow(
                gen.id, "electricity", m_p, sol.price_electricity, gap, gap >= -RECOVERY_SLACK
            )
        heat = None
        if gen.id in sol.dispatched_heat_generators:
            gap = sol.price_heat - m_h
            heat = RecoveryRow(gen.id, "heat", m_h, sol.price_heat, gap, gap >= -RECOVERY_SLACK)
        out.append(
            GeneratorRecovery(
                generator=gen.id,
                active_bounds=tuple(active),
                bound_classes=classes,
                mu_weighted_kp=kp_term,
                mu_weighted_kh=kh_term,
                electric=electric,
                heat=heat,
            )
        )
    return RecoveryDiagnosis(generators=tuple(out))

"""Domain types for market instances: generator costs, regions, demand bids."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal

from .region import OperatingRegion, Unbounded, enumerate_vertices

__all__ = [
    "CostCoefficients",
    "DemandBid",
    "GeneratorSpec",
    "MarketInstance",
    "ValidationError",
    "Violation",
    "marginal_costs",
    "total_cost",
    "validate_instance",
]

Vector = Literal["electricity", "heat"]
GeneratorKind = Literal["cogeneration", "electric-only", "heat-only"]

# Regions may undershoot p = 0 by at most this much (float dust, not behavior).
NEGATIVE_OUTPUT_SLACK = 1e-9


@dataclass(frozen=True)
class Violation:
    """A broken invariant, named by the offending entity."""

    entity: str
    rule: str

    def __str__(self) -> str:
        return f"{self.entity}: {self.rule}"


class ValidationError(ValueError):
    """Raised when an instance is structurally unusable; carries every violation."""

    def __init__(self, violations: list[Violation]):
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in self.violations))


@dataclass(frozen=True)
class CostCoefficients:
    """Coefficients of the quadratic generation cost in electricity p and heat h.

    cost(p, h) = c2p*p^2 + c1p*p + c2h*h^2 + c1h*h + chp*h*p + c0
    """

    c2p: float  # $/MWh^2
    c1p: float  # $/MWh
    c2h: float  # $/MWh^2
    c1h: float  # $/MWh
    chp: float  # $/MWh^2, cross term
    c0: float  # $

    def convexity_determinant(self) -> float:
        """Determinant of the cost Hessian [[2*c2p, chp], [chp, 2*c2h]]."""
        return 4.0 * self.c2p * self.c2h - self.chp * self.chp

    def is_convex(self) -> bool:
        return self.c2p >= 0.0 and self.c2h >= 0.0 and self.convexity_determinant() >= 0.0


@dataclass(frozen=True)
class GeneratorSpec:
    id: str
    cost: CostCoefficients
    region: OperatingRegion

    @property
    def kind(self) -> GeneratorKind:
        """Structural classification from the region's coefficients (exact zeros)."""
        if all(hs.kh == 0.0 for hs in self.region.bounds):
            return "electric-only"
        if all(hs.kp == 0.0 for hs in self.region.bounds):
            return "heat-only"
        return "cogeneration"

    @property
    def generates_power(self) -> bool:
        return self.kind != "heat-only"

    @property
    def generates_heat(self) -> bool:
        return self.kind != "electric-only"


@dataclass(frozen=True)
class DemandBid:
    id: str
    vector: Vector
    max_quantity: float  # MWh
    bid: float  # $/MWh


@dataclass(frozen=True)
class MarketInstance:
    generators: tuple[GeneratorSpec, ...]
    electric_demands: tuple[DemandBid, ...]
    heat_demands: tuple[DemandBid, ...]
    label: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "generators", tuple(self.generators))
        object.__setattr__(self, "electric_demands", tuple(self.electric_demands))
        object.__setattr__(self, "heat_demands", tuple(self.heat_demands))

    def generator(self, gen_id: str) -> GeneratorSpec:
        for gen in self.generators:
            if gen.id == gen_id:
                return gen
        raise KeyError(gen_id)


def total_cost(gen: GeneratorSpec, p: float, h: float) -> float:
    """Generation cost in $ at output (p, h); evaluates the polynomial anywhere."""
    c = gen.cost
    return c.c2p * p * p + c.c1p * p + c.c2h * h * h + c.c1h * h + c.chp * h * p + c.c0


def marginal_costs(gen: GeneratorSpec, p: float, h: float) -> tuple[float, float]:
    """Marginal electricity and heat generation costs (dC/dp, dC/dh) in $/MWh."""
    c = gen.cost
    m_p = 2.0 * c.c2p * p + c.c1p + c.chp * h
    m_h = 2.0 * c.c2h * h + c.c1h + c.chp * p
    return m_p, m_h


def _axis_interval(gen: GeneratorSpec, axis: Literal["p", "h"]) -> tuple[float, float]:
    """Feasible interval along one axis for a single-vector generator."""
    lo, hi = -math.inf, math.inf
    for hs in gen.region.bounds:
        k = hs.kp if axis == "p" else hs.kh
        if k > 0:
            hi = min(hi, hs.k0 / k)
        elif k < 0:
            lo = max(lo, hs.k0 / k)
    return lo, hi


def _region_violations(gen: GeneratorSpec) -> list[Violation]:
    entity = f"generator {gen.id}"
    kind = gen.kind
    if kind == "cogeneration":
        try:
            vertices = enumerate_vertices(gen.region)
        except Unbounded:
            return [Violation(entity, "operating region is unbounded")]
        if not vertices:
            return [Violation(entity, "operating region is empty")]
        out = []
        min_p = min(p for p, _ in vertices)
        if min_p < -NEGATIVE_OUTPUT_SLACK:
            out.append(Violation(entity, f"operating region admits negative electricity output (p >= {min_p:.6g})"))
        return out

    axis = "p" if kind == "electric-only" else "h"
    lo, hi = _axis_interval(gen, axis)
    if math.isinf(lo) or math.isinf(hi):
        return [Violation(entity, "operating region is unbounded")]
    if lo > hi + 1e-9:
        return [Violation(entity, "operating region is empty")]
    if axis == "p" and lo < -NEGATIVE_OUTPUT_SLACK:
        return [Violation(entity, f"operating region admits negative electricity output (p >= {lo:.6g})")]
    return []


def _demand_violations(bid: DemandBid, expected_vector: Vector) -> list[Violation]:
    entity = f"{expected_vector} demand {bid.id}"
    out = []
    if bid.vector != expected_vector:
        out.append(Violation(entity, f"listed under {expected_vector} but declares vector {bid.vector!r}"))
    if bid.max_quantity < 0.0:
        out.append(Violation(entity, f"max_quantity must be >= 0, got {bid.max_quantity!r}"))
    if not math.isfinite(bid.bid):
        out.append(Violation(entity, f"bid must be finite, got {bid.bid!r}"))
    if not math.isfinite(bid.max_quantity):
        out.append(Violation(entity, f"max_quantity must be finite, got {bid.max_quantity!r}"))
    return out


def validate_instance(inst: MarketInstance) -> list[Violation]:
    """All invariant violations in the instance; empty list means usable."""
    out: list[Violation] = []
    if not inst.generators:
        out.append(Violation("instance", "needs at least one generator"))

    seen: set[str] = set()
    for gen in inst.generators:
        if gen.id in seen:
            out.append(Violation(f"generator {gen.id}", "duplicate id"))
        seen.add(gen.id)
        if not gen.cost.is_convex():
            out.append(
                Violation(
                    f"generator {gen.id}",
                    "cost coefficients are not convex "
                    f"(c2p={gen.cost.c2p}, c2h={gen.cost.c2h}, "
                    f"determinant={gen.cost.convexity_determinant():.6g})",
                )
            )
        out.extend(_region_violations(gen))

    for demands, vector in ((inst.electric_demands, "electricity"), (inst.heat_demands, "heat")):
        seen = set()
        for bid in demands:
            if bid.id in seen:
                out.append(Violation(f"{vector} demand {bid.id}", "duplicate id"))
            seen.add(bid.id)
            out.extend(_demand_violations(bid, vector))
    return out

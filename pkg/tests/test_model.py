import math

import numpy as np
import pytest

from ihpm.model import (
    CostCoefficients,
    DemandBid,
    GeneratorSpec,
    MarketInstance,
    marginal_costs,
    total_cost,
    validate_instance,
)
from ihpm.region import HalfSpace, OperatingRegion

from helpers import box_region, electric_interval_region, heat_interval_region


def _gen(gen_id, cost, region):
    return GeneratorSpec(id=gen_id, cost=cost, region=region)


def test_total_cost_at_origin_is_fixed_cost(summer):
    gen1 = summer.generator("gen1")
    assert total_cost(gen1, 0.0, 0.0) == pytest.approx(12.5)


def test_total_cost_zero_polynomial():
    gen = _gen("z", CostCoefficients(0, 0, 0, 0, 0, 0), box_region(100, 100))
    assert total_cost(gen, 50.0, 50.0) == 0.0


def test_total_cost_gen2_summer_point(summer):
    gen2 = summer.generator("gen2")
    # Direct polynomial evaluation: 0.072*69.44^2 + 20*69.44 + 15.65.
    assert total_cost(gen2, 69.44, 0.0) == pytest.approx(1751.627779, abs=1e-6)
    assert total_cost(gen2, 69.44, 0.0) == pytest.approx(1751.62, abs=0.01)


def test_marginal_costs_at_published_summer_point(summer):
    gen1 = summer.generator("gen1")
    m_p, m_h = marginal_costs(gen1, 40.27, 70.0)
    assert m_p == pytest.approx(40.27, abs=0.01)
    assert m_h == pytest.approx(4.82, abs=0.01)


def test_marginal_costs_at_origin_are_linear_coefficients(summer):
    gen1 = summer.generator("gen1")
    assert marginal_costs(gen1, 0.0, 0.0) == (36.0, 0.6)


def test_marginal_costs_at_winter_point(summer):
    gen1 = summer.generator("gen1")
    m_p, m_h = marginal_costs(gen1, 104.38, 130.58)
    assert m_p == pytest.approx(46.52, abs=0.05)
    assert m_h == pytest.approx(8.80, abs=0.01)


def test_marginal_costs_match_finite_differences(summer):
    rng = np.random.default_rng(7)
    gens = list(summer.generators)
    eps = 1e-4
    for _ in range(200):
        gen = gens[rng.integers(len(gens))]
        p = float(rng.uniform(0.0, 200.0))
        h = float(rng.uniform(0.0, 200.0))
        m_p, m_h = marginal_costs(gen, p, h)
        fd_p = (total_cost(gen, p + eps, h) - total_cost(gen, p - eps, h)) / (2 * eps)
        fd_h = (total_cost(gen, p, h + eps) - total_cost(gen, p, h - eps)) / (2 * eps)
        assert abs(m_p - fd_p) <= 1e-6
        assert abs(m_h - fd_h) <= 1e-6


def test_paper_cost_coefficients_are_strictly_convex(summer):
    dets = [gen.cost.convexity_determinant() for gen in summer.generators]
    assert dets[0] == pytest.approx(0.004577, abs=1e-6)
    assert dets[1] == pytest.approx(0.004160, abs=1e-6)
    assert all(d > 0 for d in dets)


def test_generator_kind_classification():
    cost = CostCoefficients(1, 1, 1, 1, 0, 0)
    assert _gen("e", cost, electric_interval_region(10)).kind == "electric-only"
    assert _gen("h", cost, heat_interval_region(10)).kind == "heat-only"
    assert _gen("c", cost, box_region(10, 10)).kind == "cogeneration"


def test_validate_paper_instance_is_clean(summer, winter):
    assert validate_instance(summer) == []
    assert validate_instance(winter) == []


def test_validate_flags_negative_demand(summer):
    bad = MarketInstance(
        generators=summer.generators,
        electric_demands=(DemandBid("badbid", "electricity", -1.0, 10.0),),
        heat_demands=(),
        label="bad",
    )
    violations = validate_instance(bad)
    assert len(violations) == 1
    assert "badbid" in str(violations[0])


def test_validate_flags_nonconvex_cost():
    gen = _gen("nc", CostCoefficients(0, 1, 0, 1, 1, 0), box_region(10, 10))
    violations = validate_instance(
        MarketInstance(generators=(gen,), electric_demands=(), heat_demands=(), label="")
    )
    assert any("convex" in str(v) for v in violations)


def test_validate_flags_empty_and_unbounded_regions():
    cost = CostCoefficients(1, 1, 1, 1, 0, 0)
    empty = OperatingRegion(bounds=(HalfSpace(1, 0, 0), HalfSpace(-1, 0, -1), HalfSpace(0, -1, 0)))
    unbounded = OperatingRegion(bounds=(HalfSpace(-1, 0, 0), HalfSpace(0, -1, 0)))
    for region, word in ((empty, "empty"), (unbounded, "unbounded")):
        violations = validate_instance(
            MarketInstance(generators=(_gen("g", cost, region),), electric_demands=(), heat_demands=(), label="")
        )
        assert any(word in str(v) for v in violations)


def test_validate_flags_negative_power_region():
    cost = CostCoefficients(1, 1, 1, 1, 0, 0)
    region = OperatingRegion(
        bounds=(
            HalfSpace(1, 0, 10),
            HalfSpace(-1, 0, 5),  # admits p >= -5
            HalfSpace(0, 1, 10),
            HalfSpace(0, -1, 0),
        )
    )
    violations = validate_instance(
        MarketInstance(generators=(_gen("g", cost, region),), electric_demands=(), heat_demands=(), label="")
    )
    assert any("negative electricity" in str(v) for v in violations)


def test_validate_flags_duplicate_ids(summer):
    dup = MarketInstance(
        generators=summer.generators + (summer.generators[0],),
        electric_demands=summer.electric_demands,
        heat_demands=summer.heat_demands,
        label="dup",
    )
    assert any("duplicate" in str(v) for v in validate_instance(dup))


def test_validate_flags_infinite_bid():
    bad = DemandBid("inf", "heat", 1.0, math.inf)
    inst = MarketInstance(
        generators=(_gen("g", CostCoefficients(1, 1, 1, 1, 0, 0), box_region(10, 10)),),
        electric_demands=(),
        heat_demands=(bad,),
        label="",
    )
    assert any("finite" in str(v) for v in validate_instance(inst))

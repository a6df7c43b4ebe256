"""Independent oracles and instance builders shared by the test modules.

The oracles deliberately avoid the production solve paths: brute-force grids,
projected gradient, and exhaustive basis enumeration.
"""

from __future__ import annotations

import itertools

import numpy as np

from ihpm.model import CostCoefficients, DemandBid, GeneratorSpec, MarketInstance, total_cost
from ihpm.region import HalfSpace, OperatingRegion


def box_region(p_max: float, h_max: float) -> OperatingRegion:
    return OperatingRegion(
        bounds=(
            HalfSpace(1.0, 0.0, p_max),
            HalfSpace(-1.0, 0.0, 0.0),
            HalfSpace(0.0, 1.0, h_max),
            HalfSpace(0.0, -1.0, 0.0),
        )
    )


def electric_interval_region(p_max: float, p_min: float = 0.0) -> OperatingRegion:
    return OperatingRegion(bounds=(HalfSpace(1.0, 0.0, p_max), HalfSpace(-1.0, 0.0, -p_min)))


def heat_interval_region(h_max: float, h_min: float = 0.0) -> OperatingRegion:
    return OperatingRegion(bounds=(HalfSpace(0.0, 1.0, h_max), HalfSpace(0.0, -1.0, -h_min)))


def box_qp_oracle(Q, c, lb, ub, grid: int = 9, iters: int = 5000) -> float:
    """Minimum of 0.5 x'Qx + c'x over a box: coarse grid + projected gradient."""
    Q = np.asarray(Q, dtype=float)
    c = np.asarray(c, dtype=float)
    lb = np.asarray(lb, dtype=float)
    ub = np.asarray(ub, dtype=float)
    n = c.size

    axes = [np.linspace(lb[i], ub[i], grid) for i in range(n)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.reshape(-1) for m in mesh], axis=1)
    vals = 0.5 * np.einsum("ki,ij,kj->k", pts, Q, pts) + pts @ c
    x = pts[int(np.argmin(vals))].copy()

    eigs = np.linalg.eigvalsh(0.5 * (Q + Q.T))
    lipschitz = max(float(eigs.max(initial=0.0)), 0.0)
    span = float((ub - lb).max())
    grad_scale = max(float(np.abs(c).max()), 1e-9)
    step = 1.0 / lipschitz if lipschitz > 1e-12 else 0.5 * span / grad_scale
    for _ in range(iters):
        x = np.clip(x - step * (Q @ x + c), lb, ub)
    return float(0.5 * x @ Q @ x + c @ x)


def random_box_instance(rng: np.random.Generator) -> MarketInstance:
    """Two box-region cogenerators plus one electric and one heat bid.

    Bids are far above any marginal cost, so the welfare optimum serves both
    demands fully and the only freedom is the generation split; that makes a
    two-dimensional grid an exhaustive oracle.
    """
    gens = []
    p_caps = []
    h_caps = []
    for gid in ("a", "b"):
        c2p = rng.uniform(0.02, 0.2)
        c2h = rng.uniform(0.02, 0.2)
        chp = rng.uniform(-0.9, 0.9) * 2.0 * np.sqrt(c2p * c2h)
        cost = CostCoefficients(
            c2p=c2p,
            c1p=rng.uniform(1.0, 20.0),
            c2h=c2h,
            c1h=rng.uniform(1.0, 20.0),
            chp=chp,
            c0=rng.uniform(0.0, 20.0),
        )
        p_max = rng.uniform(20.0, 60.0)
        h_max = rng.uniform(20.0, 60.0)
        p_caps.append(p_max)
        h_caps.append(h_max)
        gens.append(GeneratorSpec(id=gid, cost=cost, region=box_region(p_max, h_max)))

    d_total = rng.uniform(0.3, 0.8) * sum(p_caps)
    q_total = rng.uniform(0.3, 0.8) * sum(h_caps)
    high_bid = 500.0
    return MarketInstance(
        generators=tuple(gens),
        electric_demands=(DemandBid("load_e", "electricity", d_total, high_bid),),
        heat_demands=(DemandBid("load_h", "heat", q_total, high_bid),),
        label="random-box",
    )


def grid_welfare_oracle(inst: MarketInstance, grid: int = 200) -> float:
    """Exhaustive welfare for random_box_instance outputs: 2-D generation split."""
    gen_a, gen_b = inst.generators
    d_total = inst.electric_demands[0].max_quantity
    q_total = inst.heat_demands[0].max_quantity
    bid_value = (
        inst.electric_demands[0].bid * d_total + inst.heat_demands[0].bid * q_total
    )

    pa_cap = gen_a.region.bounds[0].k0
    ha_cap = gen_a.region.bounds[2].k0
    pb_cap = gen_b.region.bounds[0].k0
    hb_cap = gen_b.region.bounds[2].k0

    pa = np.linspace(max(0.0, d_total - pb_cap), min(pa_cap, d_total), grid)
    ha = np.linspace(max(0.0, q_total - hb_cap), min(ha_cap, q_total), grid)
    PA, HA = np.meshgrid(pa, ha, indexing="ij")
    PB, HB = d_total - PA, q_total - HA

    def cost(gen, P, H):
        c = gen.cost
        return (
            c.c2p * P**2 + c.c1p * P + c.c2h * H**2 + c.c1h * H + c.chp * H * P + c.c0
        )

    welfare = bid_value - cost(gen_a, PA, HA) - cost(gen_b, PB, HB)
    return float(welfare.max())


def pm_vertex_oracle(users: list[tuple[float, float]], gens: list[tuple[float, float]]) -> float:
    """Minimal uplift bill for one energy vector by exhaustive vertex enumeration.

    The per-vector pricing program reduces to: choose a price r >= 0 and net
    uplift rates (payment minus charge) per agent, neutral in the weighted
    sum, with each agent's net rate bounded below by what nonnegative utility
    requires; the bill is the weighted sum of the positive parts. ``users``
    and ``gens`` are (quantity, bid) and (quantity, marginal cost) pairs.

    Every basic feasible solution of the equivalent LP is enumerated, so the
    returned value is the exact optimum.
    """
    agents = [(w, b, "user") for w, b in users] + [(w, m, "gen") for w, m in gens]
    k = len(agents)
    n = 2 * k + 1  # r, net_1..net_k, m_1..m_k

    # Equality: sum_a w_a * net_a = 0.
    eq = np.zeros(n)
    for a, (w, _, _) in enumerate(agents):
        eq[1 + a] = w

    rows = []
    rhs = []
    for a, (w, value, side) in enumerate(agents):
        row = np.zeros(n)
        if side == "user":
            row[0] = 1.0
            row[1 + a] = -1.0
            rows.append(row)
            rhs.append(value)  # r - net <= bid
        else:
            row[0] = -1.0
            row[1 + a] = -1.0
            rows.append(row)
            rhs.append(-value)  # -r - net <= -marginal
    for a in range(k):
        row = np.zeros(n)
        row[1 + a] = 1.0
        row[1 + k + a] = -1.0
        rows.append(row)
        rhs.append(0.0)  # net - m <= 0
    for a in range(k):
        row = np.zeros(n)
        row[1 + k + a] = -1.0
        rows.append(row)
        rhs.append(0.0)  # m >= 0
    row = np.zeros(n)
    row[0] = -1.0
    rows.append(row)
    rhs.append(0.0)  # r >= 0

    G = np.asarray(rows)
    u = np.asarray(rhs)
    cost = np.zeros(n)
    for a, (w, _, _) in enumerate(agents):
        cost[1 + k + a] = w

    best = np.inf
    for combo in itertools.combinations(range(G.shape[0]), n - 1):
        K = np.vstack([eq, G[list(combo)]])
        target = np.concatenate([[0.0], u[list(combo)]])
        try:
            x = np.linalg.solve(K, target)
        except np.linalg.LinAlgError:
            continue
        if not np.isfinite(x).all():
            continue
        if (G @ x <= u + 1e-7).all() and abs(eq @ x) <= 1e-7:
            best = min(best, float(cost @ x))
    return best


def brute_force_total_cost(inst: MarketInstance, outputs: dict[str, tuple[float, float]]) -> float:
    return sum(total_cost(gen, *outputs[gen.id]) for gen in inst.generators)

"""Convex polygonal operating regions in the (electricity, heat) output plane.

A region is an intersection of half-spaces ``kp*p + kh*h <= k0``. Bounds are
indexed 1-based (``l = 1..n``) so diagnostics line up with tabulated
coefficient rows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

__all__ = [
    "DegenerateInput",
    "HalfSpace",
    "OperatingRegion",
    "Unbounded",
    "active_bounds",
    "contains",
    "enumerate_vertices",
    "halfspaces_from_vertices",
]

# Absolute slack below which a candidate vertex counts as satisfying a bound.
FEASIBILITY_SLACK = 1e-7
# Candidate vertices closer than this are merged.
VERTEX_MERGE_DISTANCE = 1e-6


class DegenerateInput(ValueError):
    """Vertex set has fewer than three distinct points or is collinear."""


class Unbounded(ValueError):
    """The half-space intersection admits a recession direction."""


@dataclass(frozen=True)
class HalfSpace:
    """One linear bound: feasible points satisfy ``kp*p + kh*h <= k0``."""

    kp: float
    kh: float
    k0: float

    def __post_init__(self) -> None:
        if self.kp == 0.0 and self.kh == 0.0:
            raise ValueError("half-space normal (kp, kh) must be nonzero")

    def violation(self, p: float, h: float) -> float:
        """Signed constraint value; positive means infeasible by that amount."""
        return self.kp * p + self.kh * h - self.k0


@dataclass(frozen=True)
class OperatingRegion:
    """Ordered list of half-spaces; bound ``l`` is ``bounds[l - 1]``."""

    bounds: tuple[HalfSpace, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "bounds", tuple(self.bounds))

    def __len__(self) -> int:
        return len(self.bounds)

    def bound(self, l: int) -> HalfSpace:
        return self.bounds[l - 1]

    def labels(self) -> range:
        return range(1, len(self.bounds) + 1)


def contains(region: OperatingRegion, p: float, h: float, tol: float = 1e-6) -> bool:
    """True iff every bound holds within slack ``tol``."""
    return all(hs.violation(p, h) <= tol for hs in region.bounds)


def active_bounds(region: OperatingRegion, p: float, h: float, tol: float = 1e-6) -> list[int]:
    """1-based indices of bounds holding with equality within ``tol``."""
    return [l for l, hs in enumerate(region.bounds, start=1) if abs(hs.violation(p, h)) <= tol]


def _intersect(a: HalfSpace, b: HalfSpace) -> tuple[float, float] | None:
    det = a.kp * b.kh - a.kh * b.kp
    scale = max(abs(a.kp), abs(a.kh), abs(b.kp), abs(b.kh))
    if abs(det) <= 1e-12 * scale * scale:
        return None
    p = (a.k0 * b.kh - a.kh * b.k0) / det
    h = (a.kp * b.k0 - a.k0 * b.kp) / det
    return (p, h)


def _normals_span_plane(bounds: tuple[HalfSpace, ...]) -> bool:
    """True when the outward normals positively span R^2.

    Equivalent to the recession cone {d : K d <= 0} being trivial: no closed
    half-plane contains every normal, i.e. every circular gap between
    consecutive normal angles is < pi.
    """
    angles = sorted(math.atan2(hs.kh, hs.kp) for hs in bounds)
    gaps = [b - a for a, b in zip(angles, angles[1:])]
    gaps.append(angles[0] + 2.0 * math.pi - angles[-1])
    return max(gaps) < math.pi - 1e-12


def _all_parallel(bounds: tuple[HalfSpace, ...]) -> bool:
    ref = bounds[0]
    for hs in bounds[1:]:
        scale = max(abs(ref.kp), abs(ref.kh), abs(hs.kp), abs(hs.kh))
        if abs(ref.kp * hs.kh - ref.kh * hs.kp) > 1e-12 * scale * scale:
            return False
    return True


def _parallel_family_empty(bounds: tuple[HalfSpace, ...]) -> bool:
    """Feasibility of bounds whose normals are all (anti)parallel."""
    ref = bounds[0]
    norm_sq = ref.kp * ref.kp + ref.kh * ref.kh
    lo, hi = -math.inf, math.inf
    for hs in bounds:
        # Each bound is alpha * (ref . x) <= k0 for a scalar alpha.
        alpha = (hs.kp * ref.kp + hs.kh * ref.kh) / norm_sq
        if alpha > 0:
            hi = min(hi, hs.k0 / alpha)
        else:
            lo = max(lo, hs.k0 / alpha)
    return lo > hi + FEASIBILITY_SLACK


def enumerate_vertices(region: OperatingRegion) -> list[tuple[float, float]]:
    """Corners of the region, counterclockwise.

    Pairwise bound intersections that satisfy every other bound within 1e-7
    are kept, merged within 1e-6, and ordered counterclockwise around their
    centroid. An empty list means the region is empty. Raises ``Unbounded``
    when a nonempty region admits a recession direction.
    """
    bounds = region.bounds
    candidates = []
    for i in range(len(bounds)):
        for j in range(i + 1, len(bounds)):
            pt = _intersect(bounds[i], bounds[j])
            if pt is None:
                continue
            if all(hs.violation(*pt) <= FEASIBILITY_SLACK for hs in bounds):
                candidates.append(pt)

    merged: list[tuple[float, float]] = []
    for pt in candidates:
        if all(math.hypot(pt[0] - q[0], pt[1] - q[1]) >= VERTEX_MERGE_DISTANCE for q in merged):
            merged.append(pt)

    if not merged:
        if _all_parallel(bounds):
            if _parallel_family_empty(bounds):
                return []
            raise Unbounded("region has no corners but extends along its boundary direction")
        # Normals span at least two directions: a nonempty region would have
        # an extreme point, which would appear among the candidates.
        return []

    if not _normals_span_plane(bounds):
        raise Unbounded("region has a recession direction")

    cx = sum(p for p, _ in merged) / len(merged)
    ch = sum(h for _, h in merged) / len(merged)
    merged.sort(key=lambda pt: math.atan2(pt[1] - ch, pt[0] - cx))
    return merged


def _cross(o: tuple[float, float], a: tuple[float, float], b: tuple[float, float]) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _convex_hull_ccw(points: list[tuple[float, float]]) -> list[tuple[float, float]]:
    """Monotone-chain hull, counterclockwise, collinear points dropped."""
    pts = sorted(set(points))
    if len(pts) <= 2:
        return pts
    span = max(max(abs(p), abs(h)) for p, h in pts)
    area_tol = 1e-12 * max(1.0, span * span)
    lower: list[tuple[float, float]] = []
    for pt in pts:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], pt) <= area_tol:
            lower.pop()
        lower.append(pt)
    upper: list[tuple[float, float]] = []
    for pt in reversed(pts):
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], pt) <= area_tol:
            upper.pop()
        upper.append(pt)
    return lower[:-1] + upper[:-1]


def halfspaces_from_vertices(points: list[tuple[float, float]]) -> OperatingRegion:
    """Half-space representation of the convex hull of sampled output points.

    Each returned bound is scaled so its first nonzero coefficient among
    (kp, kh) has magnitude one, matching the usual tabulated convention.
    """
    pts = [(float(p), float(h)) for p, h in points]
    hull = _convex_hull_ccw(pts)
    if len(hull) < 3:
        raise DegenerateInput(
            "need at least 3 distinct, non-collinear points; got a hull of %d" % len(hull)
        )

    bounds = []
    for v, w in zip(hull, hull[1:] + hull[:1]):
        ep, eh = w[0] - v[0], w[1] - v[1]
        kp, kh = eh, -ep  # outward normal of a CCW edge
        scale = max(abs(kp), abs(kh))
        pivot = kp if abs(kp) > 1e-9 * scale else kh
        kp, kh = kp / abs(pivot), kh / abs(pivot)
        # Coefficients below the pivot-selection threshold are geometric noise.
        if abs(kp) <= 1e-9:
            kp = 0.0
        if abs(kh) <= 1e-9:
            kh = 0.0
        bounds.append(HalfSpace(kp=kp, kh=kh, k0=kp * v[0] + kh * v[1]))
    return OperatingRegion(bounds=tuple(bounds))

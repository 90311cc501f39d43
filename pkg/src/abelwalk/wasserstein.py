"""Exact Wasserstein-1 distances between atomic measures."""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .groups import Group, GroupMismatch, Torus
from .measures import (
    AtomicMeasure,
    _same_group,
    convolve_sequence,
    dirac,
    from_pairs,
    signed_difference,
    uniform,
)
from .transport import solve_transport

MASS_MISMATCH_TOL = 1e-10
# finite groups up to this order use a cached pairwise distance matrix
DENSE_METRIC_MAX = 1024


@dataclass(frozen=True)
class TransportPlan:
    """Coupling between ``source`` and ``target`` realising ``cost``.

    ``flows`` lists ``(source_index, target_index, mass)`` triples with
    positive mass, indices into the measures' atom tuples.
    """

    source: AtomicMeasure
    target: AtomicMeasure
    flows: tuple
    cost: float

    def matrix(self) -> np.ndarray:
        X = np.zeros((len(self.source), len(self.target)))
        for i, j, x in self.flows:
            X[i, j] = x
        return X

    def marginal_error(self) -> float:
        X = self.matrix()
        return max(np.abs(X.sum(axis=1) - self.source.weight_array()).max(initial=0.0),
                   np.abs(X.sum(axis=0) - self.target.weight_array()).max(initial=0.0))


def cost_matrix(mu: AtomicMeasure, nu: AtomicMeasure) -> np.ndarray:
    g = mu.group
    a, b = mu.encoded(), nu.encoded()
    return g.metric_array(a[:, None, :], b[None, :, :])


def w1_exact(mu: AtomicMeasure, nu: AtomicMeasure) -> tuple[float, TransportPlan]:
    """Minimum transport cost between two atomic measures of equal mass."""
    _same_group(mu, nu)
    ma, mb = float(mu.total_mass), float(nu.total_mass)
    if abs(ma - mb) > MASS_MISMATCH_TOL:
        raise ValueError(f"cannot transport mass {ma} onto mass {mb}")
    if not mu.points:
        return 0.0, TransportPlan(mu, nu, (), 0.0)
    a = mu.weight_array()
    b = nu.weight_array()
    b = b * (a.sum() / b.sum())
    C = cost_matrix(mu, nu)
    X, cost = solve_transport(a, b, C)
    flows = tuple((int(i), int(j), float(X[i, j])) for i, j in zip(*np.nonzero(X > 0)))
    return cost, TransportPlan(mu, nu, flows, cost)


def w1(mu: AtomicMeasure, nu: AtomicMeasure) -> float:
    """W1 distance alone.

    W1 depends only on mu - nu, so mass the two measures share at an atom can
    stay put; only the positive part is transported onto the negative part.
    """
    g = _same_group(mu, nu)
    ma, mb = float(mu.total_mass), float(nu.total_mass)
    if abs(ma - mb) > MASS_MISMATCH_TOL:
        raise ValueError(f"cannot transport mass {ma} onto mass {mb}")
    if g.finite and g.order <= DENSE_METRIC_MAX:
        d = mu.to_dense() - nu.to_dense()
        pos, neg = np.flatnonzero(d > 0), np.flatnonzero(d < 0)
        if not pos.size or not neg.size:
            return 0.0
        a, b = d[pos], -d[neg]
        return solve_transport(a, b * (a.sum() / b.sum()), g.distance_matrix[np.ix_(pos, neg)])[1]
    diff = signed_difference(mu, nu)
    pos = [(x, float(w)) for x, w in diff.items() if w > 0]
    neg = [(x, -float(w)) for x, w in diff.items() if w < 0]
    if not pos or not neg:
        return 0.0
    a = np.array([w for _, w in pos])
    b = np.array([w for _, w in neg])
    b = b * (a.sum() / b.sum())
    C = g.metric_array(g.encode([x for x, _ in pos])[:, None, :], g.encode([x for x, _ in neg])[None, :, :])
    return solve_transport(a, b, C)[1]


def w1_to_haar(nu: AtomicMeasure) -> float:
    """W1 distance from a probability measure on a finite group to Haar measure."""
    g = nu.group
    if not g.finite:
        raise GroupMismatch("w1_to_haar needs a finite group; use the torus bounds instead")
    if not nu.is_probability():
        raise ValueError(f"w1_to_haar needs a probability measure, got mass {nu.total_mass}")
    return w1(nu, uniform(g))


def dirac_to_haar(g: Group) -> float:
    """W(delta_x, h) = integral of d(x, y) dh(y); independent of x."""
    if isinstance(g, Torus):
        # E[max of d i.i.d. U(0, 1/2)]
        d = g.dimension
        return d / (2.0 * (d + 1))
    return float(np.mean(g.distance_from_zero))


def w1_circle_to_haar(nu: AtomicMeasure) -> float:
    """Exact W1 between an atomic probability measure on Torus(1) and Lebesgue.

    On the circle W1(nu, h) = min_c int_0^1 |F(x) - x - c| dx; the minimiser c
    is a median of F(x) - x under Lebesgue measure.  F - x is piecewise linear
    with slope -1 between atoms, so the integral is a sum of closed-form pieces.
    """
    g = nu.group
    if not (isinstance(g, Torus) and g.dimension == 1):
        raise GroupMismatch("w1_circle_to_haar needs Torus(1)")
    if not nu.is_probability():
        raise ValueError("w1_circle_to_haar needs a probability measure")
    xs = np.array([p[0] for p in nu.points])
    ws = nu.weight_array()
    order = np.argsort(xs)
    xs, ws = xs[order], ws[order]
    knots = np.concatenate([[0.0], xs, [1.0]])
    levels = np.concatenate([[0.0], np.cumsum(ws)])
    # on [knots[i], knots[i+1]) the function is levels[i] - x
    lo_end = levels - knots[1:]   # value at right end (exclusive)
    hi_end = levels - knots[:-1]  # value at left end
    lengths = knots[1:] - knots[:-1]

    def cdf(c):
        # Lebesgue measure of {x : F(x) - x <= c}
        return float(np.sum(np.clip(c - lo_end, 0.0, lengths)))

    lo, hi = float(lo_end.min()), float(hi_end.max())
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if cdf(mid) < 0.5:
            lo = mid
        else:
            hi = mid
    c = 0.5 * (lo + hi)

    def piece(a, b):
        # integral of |t - c| for t uniform along a segment from b down to a
        if b - a <= 0:
            return 0.0
        if c <= a:
            return (b - a) * (0.5 * (a + b) - c)
        if c >= b:
            return (b - a) * (c - 0.5 * (a + b))
        return 0.5 * ((c - a) ** 2 + (b - c) ** 2)

    return math.fsum(piece(a, b) for a, b in zip(lo_end, hi_end))


def w1_haar_upper_bound_torus(nu: AtomicMeasure, grid_n: int) -> float:
    """Certified upper bound on W(nu, h) for atomic ``nu`` on a torus.

    Atoms are snapped to the grid (1/grid_n) Z^d, which moves mass at most the
    snap radius r = 1/(2 grid_n); the uniform grid measure is within r of Haar
    measure.  So W(nu, h) <= W(snapped nu, grid) + 2r.
    """
    g = nu.group
    if not isinstance(g, Torus):
        raise GroupMismatch("w1_haar_upper_bound_torus needs a torus")
    if grid_n < 2:
        raise ValueError("grid_n must be >= 2")
    radius = 0.5 / grid_n
    snapped = from_pairs(g, [(tuple((np.round(np.array(x) * grid_n) % grid_n) / grid_n), w)
                             for x, w in nu])
    grid = [tuple(np.array(ix, dtype=float) / grid_n) for ix in np.ndindex(*(grid_n,) * g.dimension)]
    w = 1.0 / len(grid)
    target = from_pairs(g, [(x, w * float(nu.total_mass)) for x in grid])
    return w1(snapped, target) + 2.0 * radius


def contraction_coefficient(window: Sequence[AtomicMeasure], group: Group | None = None) -> float:
    """sup over nu, nu' of W(C * nu, C * nu') with C the window's convolution.

    By convexity of W the supremum is attained at Dirac masses, and by
    translation invariance W(C * delta_x, C * delta_y) = W(C, C + (y - x)), so
    one transport problem per group element suffices.  An empty window gives
    C = delta_0 and the coefficient is the diameter.
    """
    g = group if group is not None else window[0].group
    if not g.finite:
        raise GroupMismatch("contraction_coefficient needs a finite group")
    C = convolve_sequence(list(window)) if window else dirac(g)
    best = 0.0
    for z in g.elements():
        best = max(best, w1(C, C.translated(z)))
    return best


def convex_combination(t, mu: AtomicMeasure, nu: AtomicMeasure) -> AtomicMeasure:
    _same_group(mu, nu)
    t = Fraction(t) if isinstance(t, Fraction) else t
    return from_pairs(mu.group, [(x, t * w) for x, w in mu] + [(x, (1 - t) * w) for x, w in nu])

"""Wide-set partitions and the constructive contraction certificate.

A set is eps-wide when it sits inside a ball of radius eps and contains a ball
of radius eps/3.  Given a partition into eps-wide cells and a lower bound delta
on the mass any eps-wide set receives after m steps, every block of m steps
peels off a delta-fraction of the remaining mass that is within eps of Haar
measure.  After r rounds with (1 - delta)^r < eps the walk is within
(diameter + 1) * eps of Haar measure.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .aperiodicity import CapExceeded, HypothesisError
from .groups import METRIC_TOL, Group, GroupMismatch, Torus
from .measures import (
    AtomicMeasure,
    AtomCapExceeded,
    convolve,
    convolve_sequence,
    from_pairs,
    zero_measure,
)
from .wasserstein import w1_to_haar

MAX_CELLS = 1_000_000


@dataclass(frozen=True)
class WideSetPartition:
    """Partition of a group into certified eps-wide cells.

    Finite groups: ``cells`` are frozensets of elements and ``labels[i]`` is the
    cell of element index ``i``.  Tori: cells are half-open boxes
    ``[k/N, (k+1)/N)`` per axis, listed in C order of the box index.
    ``outer`` and ``inner`` hold ``(center, radius)`` certificates.
    """

    group: Group
    epsilon: float
    cells: tuple
    outer: tuple
    inner: tuple
    masses: tuple
    labels: np.ndarray | None = None
    boxes_per_axis: int | None = None

    def __len__(self):
        return len(self.cells)

    def cell_labels(self, encoded: np.ndarray) -> np.ndarray:
        """Cell index for each encoded element."""
        if isinstance(self.group, Torus):
            N = self.boxes_per_axis
            k = np.minimum(np.floor(encoded * N).astype(np.int64), N - 1)
            return np.ravel_multi_index(tuple(k.T), (N,) * self.group.dimension)
        return self.labels[self.group.index_of_array(encoded)]

    def cell_of(self, x) -> int:
        return int(self.cell_labels(self.group.encode([x]))[0])

    def verify(self) -> bool:
        """Re-check every ball certificate and the mass total; raise on failure."""
        g, eps = self.group, self.epsilon
        if abs(float(sum(self.masses)) - 1.0) > 1e-12:
            raise AssertionError(f"cell masses sum to {float(sum(self.masses))}")
        if isinstance(g, Torus):
            N = self.boxes_per_axis
            half = 0.5 / N
            for (c_out, r_out), (c_in, r_in) in zip(self.outer, self.inner):
                # a box of half-side `half` is the sup-metric ball around its center
                if r_out > eps + METRIC_TOL or half > r_out + METRIC_TOL:
                    raise AssertionError("torus cell not inside its outer ball")
                if r_in < eps / 3 - METRIC_TOL or r_in > half + METRIC_TOL:
                    raise AssertionError("torus cell does not contain its inner ball")
            return True
        els = g.encode(g.elements())
        for cell, (c_out, r_out), (c_in, r_in) in zip(self.cells, self.outer, self.inner):
            members = g.encode(sorted(cell, key=g.index))
            if r_out > eps + METRIC_TOL or r_in < eps / 3 - METRIC_TOL:
                raise AssertionError("certificate radii out of range")
            d_out = g.metric_array(members, g.encode([c_out]))
            if np.any(d_out > r_out + METRIC_TOL):
                raise AssertionError(f"cell around {c_out} leaves its outer ball")
            d_in = g.metric_array(els, g.encode([c_in]))
            inside = {x for x, d in zip(g.elements(), d_in) if d <= r_in + METRIC_TOL}
            if not inside <= cell:
                raise AssertionError(f"cell around {c_in} misses part of its inner ball")
        seen = set()
        for cell in self.cells:
            if seen & cell:
                raise AssertionError("cells overlap")
            seen |= cell
        if len(seen) != g.order:
            raise AssertionError("cells do not cover the group")
        return True


def vitali_partition(g: Group, eps: float) -> WideSetPartition:
    """Partition ``g`` into eps-wide cells.

    Finite groups: greedily pick a maximal set of centers with pairwise distance
    > 2 eps/3 (canonical element order), then send each element to its nearest
    center, ties to the earlier center.  Maximality puts every cell inside the
    closed ball of radius 2 eps/3 around its center; separation puts the closed
    eps/3 ball around each center inside its own cell.

    Tori: N = ceil(1/eps) boxes per axis, side 1/N in [2 eps/3, eps].
    """
    if not 0 < eps <= g.diameter() + METRIC_TOL:
        raise ValueError(f"eps must lie in (0, diameter = {g.diameter()}], got {eps}")
    if isinstance(g, Torus):
        N = math.ceil(1.0 / eps - 1e-12)
        if N ** g.dimension > MAX_CELLS:
            raise CapExceeded(f"eps = {eps} needs {N ** g.dimension} cells; too fine for this group")
        half = 0.5 / N
        cells, outer, inner = [], [], []
        for k in np.ndindex(*(N,) * g.dimension):
            lo = tuple(i / N for i in k)
            center = tuple((i + 0.5) / N for i in k)
            cells.append((lo, 1.0 / N))
            outer.append((center, eps))
            inner.append((center, half))
        masses = ((1.0 / N) ** g.dimension,) * len(cells)
        part = WideSetPartition(g, eps, tuple(cells), tuple(outer), tuple(inner), masses,
                                boxes_per_axis=N)
        part.verify()
        return part

    els = g.encode(g.elements())
    sep = 2.0 * eps / 3.0
    centers: list[int] = []
    for i in range(g.order):
        if not centers or np.all(g.metric_array(els[centers], els[i:i + 1]) > sep + METRIC_TOL):
            centers.append(i)
    d = g.metric_array(els[:, None, :], els[centers][None, :, :])
    labels = np.argmin(d, axis=1)  # argmin keeps the first center on ties
    elements = g.elements()
    cells, outer, inner, masses = [], [], [], []
    for k, c in enumerate(centers):
        members = frozenset(elements[i] for i in np.flatnonzero(labels == k))
        cells.append(members)
        outer.append((elements[c], eps))
        inner.append((elements[c], eps / 3.0))
        masses.append(Fraction(len(members), g.order))
    part = WideSetPartition(g, eps, tuple(cells), tuple(outer), tuple(inner), tuple(masses),
                            labels=labels)
    part.verify()
    return part


def wide_set_mass_lower_bound(nu: AtomicMeasure, eps: float):
    """delta = min over x of nu(B(x, eps/3)) (closed balls).

    Every eps-wide set contains such a ball, so it gets at least delta.  Exact on
    finite groups (Fractions in, Fraction out).  On a torus the minimum is taken
    over a grid of spacing s <= eps/12 with radius eps/3 - s/2, which is a
    certified lower bound.
    """
    g = nu.group
    if not nu.points:
        return 0.0
    pts = nu.encoded()
    if g.finite:
        els = g.encode(g.elements())
        inball = g.metric_array(els[:, None, :], pts[None, :, :]) <= eps / 3 + METRIC_TOL
        if nu.exact:
            return min(sum((w for w, hit in zip(nu.weights, row) if hit), Fraction(0))
                       for row in inball)
        return float((inball @ nu.weight_array()).min())
    k = max(2, math.ceil(12.0 / eps))
    radius = eps / 3 - 0.5 / k
    axes = [np.arange(k) / k] * g.dimension
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, g.dimension)
    w = nu.weight_array()
    best = math.inf
    for chunk in np.array_split(grid, max(1, len(grid) // 2048)):
        inball = g.metric_array(chunk[:, None, :], pts[None, :, :]) <= radius
        best = min(best, float((inball @ w).min()))
    return best


@dataclass(frozen=True)
class Decomposition:
    nu0: AtomicMeasure
    nu1: AtomicMeasure
    cell_masses: tuple
    coupling_cost: float
    """Cost of the cellwise product coupling between nu1/|nu1| and Haar measure."""


def _cell_masses(nu: AtomicMeasure, P: WideSetPartition):
    labels = P.cell_labels(nu.encoded()) if nu.points else np.array([], dtype=int)
    exact = nu.exact
    masses = [Fraction(0) if exact else 0.0 for _ in P.cells]
    for lab, w in zip(labels, nu.weights):
        masses[lab] += w
    return masses, labels


def _product_coupling_cost(nu1: AtomicMeasure, P: WideSetPartition, labels) -> float:
    g = nu1.group
    total = float(nu1.total_mass)
    if total == 0:
        return 0.0
    if isinstance(g, Torus):
        return max(float(2 * P.inner[0][1]), 0.0)  # box side bounds every in-cell distance
    pts = nu1.encoded()
    cost = 0.0
    cell_members = [g.encode(sorted(c, key=g.index)) for c in P.cells]
    for x, lab, w in zip(pts, labels, nu1.weight_array()):
        cost += w * float(g.metric_array(x[None, :], cell_members[lab]).mean())
    return float(cost / total)


def decompose(nu: AtomicMeasure, P: WideSetPartition, delta) -> Decomposition:
    """Split nu = nu0 + nu1 with nu1(Q_j) = delta * h(Q_j) on every cell.

    nu1 reweights nu inside each cell by delta h(Q_j) / nu(Q_j); this needs
    nu(Q_j) > 0 and delta <= nu(Q_j) / h(Q_j) for every cell.
    """
    if nu.group != P.group:
        raise GroupMismatch("measure and partition live on different groups")
    masses, labels = _cell_masses(nu, P)
    if any(m == 0 for m in masses):
        empty = [j for j, m in enumerate(masses) if m == 0]
        raise HypothesisError(f"wide-set mass hypothesis violated: cells {empty[:5]} have zero mass")
    hq = P.masses if nu.exact else tuple(float(h) for h in P.masses)
    ratios = [m / h for m, h in zip(masses, hq)]
    if delta > min(ratios) * (1 + 1e-12):
        raise HypothesisError(f"delta = {float(delta)} exceeds min nu(Q)/h(Q) = {float(min(ratios))}")
    factor = [min(delta * h / m, 1) for h, m in zip(hq, masses)]
    p0, p1 = [], []
    for x, lab, w in zip(nu.points, labels, nu.weights):
        w1 = w * factor[lab]
        p1.append((x, w1))
        p0.append((x, w - w1))
    nu1 = from_pairs(nu.group, [(x, w) for x, w in p1 if w > 0])
    nu0 = from_pairs(nu.group, [(x, w) for x, w in p0 if w > 0])
    return Decomposition(nu0, nu1, tuple(masses), _product_coupling_cost(nu1, P, labels))


@dataclass
class ContractionCertificate:
    """Outcome of the constructive contraction argument on one schedule."""

    m: int
    r: int
    delta: Fraction
    epsilon: float
    diameter: float
    residual_masses: tuple           # (1 - delta)^j, j = 0..r, exact
    measured_residual_masses: tuple  # total mass actually left after each round
    bound: float                     # (diameter + 1) * epsilon
    coupling_bound: float            # diameter * (1-delta)^r + sum of per-round coupling costs
    final_w1: float
    stages: list = field(default_factory=list)
    restarts: int = 0

    @property
    def holds(self) -> bool:
        return self.final_w1 <= self.bound + 1e-10

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "r": self.r,
            "delta": float(self.delta),
            "delta_exact": str(self.delta),
            "epsilon": self.epsilon,
            "diameter": self.diameter,
            "bound": self.bound,
            "coupling_bound": self.coupling_bound,
            "final_w1": self.final_w1,
            "holds": self.holds,
            "residual_masses": [float(x) for x in self.residual_masses],
            "measured_residual_masses": [float(x) for x in self.measured_residual_masses],
            "restarts": self.restarts,
            "stages": self.stages,
        }


def _as_step_fn(schedule) -> tuple[Callable[[int], AtomicMeasure], int | None]:
    if callable(schedule):
        return schedule, None
    seq = list(schedule)
    return (lambda n: seq[n - 1]), len(seq)


def rounds_needed(delta, eps: float) -> int:
    """r = ceil(log_{1-delta} eps) + 1, the first integer strictly above log_{1-delta} eps."""
    delta = float(delta)
    if delta >= 1.0:
        return 1
    return math.ceil(math.log(eps) / math.log1p(-delta)) + 1


def contraction_certificate(schedule, nu: AtomicMeasure, eps: float, m_cap: int = 64,
                            max_restarts: int = 32, atom_cap: int = 1_000_000,
                            max_rounds: int = 100_000) -> ContractionCertificate:
    """Build and check the contraction certificate for ``schedule`` started at ``nu``.

    ``schedule`` is a list ``[mu_1, mu_2, ...]`` or a callable ``n -> mu_n``
    (1-based).  Among block lengths m <= m_cap whose first block gives
    delta > 0, the one with the fewest total steps m * r is used.  Later blocks
    must give the residual at least the same delta; when one falls short,
    delta is lowered (or m increased when the shortfall is total) and the
    construction restarts.  A delta so small that
    more than ``max_rounds`` rounds would be needed raises CapExceeded.
    """
    g = nu.group
    if not g.finite:
        raise GroupMismatch("contraction_certificate needs a finite group")
    if not nu.is_probability():
        raise ValueError("starting measure must be a probability measure")
    step, length = _as_step_fn(schedule)
    P = vitali_partition(g, eps)
    diam = g.diameter()
    exact = nu.exact

    def block(j, m):
        lo, hi = (j - 1) * m + 1, j * m
        if length is not None and hi > length:
            raise HypothesisError(f"schedule has {length} steps but round {j} needs steps {lo}..{hi}")
        return convolve_sequence([step(n) for n in range(lo, hi + 1)], atom_cap)

    def choose_block(m_start):
        """(m, delta_m) minimising m * r(delta_m) over m >= m_start with delta_m > 0."""
        law = nu
        for n in range(1, m_start):
            law = convolve(step(n), law, atom_cap)
        best = None
        for m in range(m_start, m_cap + 1):
            if length is not None and m > length:
                break
            law = convolve(step(m), law, atom_cap)
            d = wide_set_mass_lower_bound(law, eps)
            if d > 0:
                cost = m * rounds_needed(d, eps)
                if best is None or cost < best[0]:
                    best = (cost, m, d)
            if best is not None and m + 1 >= best[0]:
                break  # a longer block costs at least m + 1 steps
        if best is None:
            raise HypothesisError(
                f"no block length {m_start} <= m <= {m_cap} gives every eps-wide set positive mass "
                f"(the schedule prefix of length {m_cap} is not mixing enough)")
        return best[1], Fraction(best[2])

    m = 1
    delta = None
    restarts = 0
    while True:
        if delta is None:
            m, delta = choose_block(m)
        r = rounds_needed(delta, eps)
        if r > max_rounds:
            raise CapExceeded(f"delta = {float(delta):.3g} (m = {m}) needs r = {r} rounds, "
                              f"above the cap of {max_rounds}")
        residual = nu
        R = Fraction(1)
        stages, measured = [], [float(nu.total_mass)]
        coupling = 0.0
        failed = None
        for j in range(1, r + 1):
            pushed = convolve(block(j, m), residual, atom_cap)
            mass = pushed.total_mass
            dj = wide_set_mass_lower_bound(pushed.normalized(), eps)
            if dj < delta:
                failed = dj
                break
            extract = (delta if exact else float(delta)) * mass
            dec = decompose(pushed, P, extract)
            coupling += float(delta * R) * dec.coupling_cost
            stages.append({
                "round": j,
                "steps": [(j - 1) * m + 1, j * m],
                "block_delta": float(dj),
                "extracted_mass": float(dec.nu1.total_mass),
                "residual_mass": float(dec.nu0.total_mass),
                "coupling_cost": dec.coupling_cost,
            })
            residual = dec.nu0 if dec.nu0.points else zero_measure(g)
            R *= 1 - delta
            measured.append(float(residual.total_mass))
        if failed is not None:
            restarts += 1
            if restarts > max_restarts:
                raise HypothesisError("delta kept shrinking; giving up after too many restarts")
            if failed == 0:
                m += 1
                delta = None
            else:
                delta = Fraction(failed)
            continue
        break

    total = convolve(block(1, m * r), nu, atom_cap) if length is None or m * r <= length else None
    final = w1_to_haar(total.normalized()) if total is not None else math.nan
    residual_masses = tuple((1 - delta) ** j for j in range(r + 1))
    coupling_bound = diam * float(residual_masses[-1]) + coupling
    return ContractionCertificate(
        m=m, r=r, delta=delta, epsilon=eps, diameter=diam,
        residual_masses=residual_masses,
        measured_residual_masses=tuple(measured),
        bound=(diam + 1) * eps,
        coupling_bound=coupling_bound,
        final_w1=final,
        stages=stages,
        restarts=restarts,
    )

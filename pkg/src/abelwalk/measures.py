"""Finitely supported measures and convolution.

Weights may be Python floats or :class:`fractions.Fraction`.  Fractions are
carried through convolution and the other algebraic operations untouched, which
gives exact arithmetic on finite groups when it is wanted; float weights take a
vectorised path.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from fractions import Fraction
from typing import Callable, Iterable, Sequence

import numpy as np

from .groups import Group, GroupMismatch, Torus

DEFAULT_ATOM_CAP = 1_000_000
# torus atoms closer than this (in the group metric) are the same atom
TORUS_MERGE_TOL = 1e-12
MASS_TOL = 1e-12


class AtomCapExceeded(RuntimeError):
    """A convolution would produce more atoms than the configured cap."""


def _total(weights) -> float | Fraction:
    if any(isinstance(w, Fraction) for w in weights):
        return sum(weights, Fraction(0))
    return math.fsum(weights)


def _is_exact(weights) -> bool:
    return bool(weights) and all(isinstance(w, (Fraction, int)) for w in weights)


@dataclass(frozen=True)
class AtomicMeasure:
    """A finite nonnegative combination of Dirac masses on ``group``.

    ``points`` are canonical group elements, pairwise distinct; ``weights`` are
    strictly positive.  The zero measure (no atoms) is allowed because
    decompositions produce it.
    """

    group: Group
    points: tuple
    weights: tuple
    total_mass: float | Fraction = field(init=False)

    def __post_init__(self):
        points = tuple(self.points)
        weights = tuple(self.weights)
        if len(points) != len(weights):
            raise ValueError("points and weights differ in length")
        for x in points:
            self.group.check(x)
        if any(not w > 0 for w in weights):
            raise ValueError("atom weights must be strictly positive")
        if len(set(points)) != len(points):
            raise ValueError("atoms must be pairwise distinct")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "total_mass", _total(weights) if weights else 0.0)

    @classmethod
    def _trusted(cls, group: Group, points: tuple, weights: tuple) -> "AtomicMeasure":
        """Skip validation; for callers that build canonical, distinct, positive atoms."""
        self = object.__new__(cls)
        object.__setattr__(self, "group", group)
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "total_mass", _total(weights) if weights else 0.0)
        return self

    def __len__(self):
        return len(self.points)

    def __iter__(self):
        return iter(zip(self.points, self.weights))

    @property
    def exact(self) -> bool:
        return _is_exact(self.weights)

    def is_probability(self, tol: float = MASS_TOL) -> bool:
        return abs(float(self.total_mass) - 1.0) <= tol or self.total_mass == 1

    def weight_array(self) -> np.ndarray:
        return np.array([float(w) for w in self.weights], dtype=float)

    def encoded(self) -> np.ndarray:
        return self.group.encode(self.points)

    def mass_of(self, predicate: Callable) -> float | Fraction:
        return _total([w for x, w in self if predicate(x)]) if self.points else 0.0

    @cached_property
    def indices(self) -> np.ndarray:
        """Canonical element indices of the atoms (finite groups only)."""
        return self.group.index_of_array(self.encoded())

    def to_dense(self) -> np.ndarray:
        """Float weight vector indexed by the group's canonical element order."""
        vec = np.zeros(self.group.order)
        if self.points:
            vec[self.indices] = self.weight_array()
        return vec

    def scaled(self, c) -> "AtomicMeasure":
        if c == 0:
            return zero_measure(self.group)
        return AtomicMeasure(self.group, self.points, tuple(w * c for w in self.weights))

    def normalized(self) -> "AtomicMeasure":
        return self.scaled(1 / self.total_mass)

    def translated(self, a) -> "AtomicMeasure":
        """Pushforward under x -> x + a."""
        return from_pairs(self.group, [(self.group.add(x, a), w) for x, w in self])

    def as_dict(self) -> dict:
        return dict(zip(self.points, self.weights))

    def allclose(self, other: "AtomicMeasure", tol: float = 1e-12) -> bool:
        """Same atoms (up to the torus merge rule) and weights within ``tol``."""
        _same_group(self, other)
        diff = signed_difference(self, other)
        return all(abs(float(w)) <= tol for w in diff.values())


def _same_group(*measures):
    g = measures[0].group
    for m in measures[1:]:
        if m.group != g:
            raise GroupMismatch(f"measures live on different groups: {g} vs {m.group}")
    return g


def _circle_sup(x, y) -> float:
    return max(min(abs(a - b), 1.0 - abs(a - b)) for a, b in zip(x, y))


def _torus_merge(g: Torus, pairs: Iterable) -> dict:
    """Merge torus atoms that lie within TORUS_MERGE_TOL of an earlier atom."""
    cell = 1e-9
    buckets: dict[tuple, list] = {}
    out: dict[tuple, object] = {}
    for x, w in pairs:
        if x in out:
            out[x] = out[x] + w
            continue
        key = tuple(int(c // cell) for c in x)
        rep = None
        n = len(key)
        ncell = int(round(1.0 / cell))
        for offs in np.ndindex(*(3,) * n):
            nb = tuple((k + o - 1) % ncell for k, o in zip(key, offs))
            for y in buckets.get(nb, ()):
                if _circle_sup(x, y) <= TORUS_MERGE_TOL:
                    rep = y
                    break
            if rep is not None:
                break
        if rep is None:
            buckets.setdefault(key, []).append(x)
            out[x] = w
        else:
            out[rep] = out[rep] + w
    return out


def from_pairs(group: Group, pairs: Iterable) -> AtomicMeasure:
    """Build a measure from ``(element, weight)`` pairs, merging equal elements.

    Zero weights are dropped.  On the torus, elements within ``TORUS_MERGE_TOL``
    are merged into the first one seen.
    """
    pairs = list(pairs)
    if isinstance(group, Torus):
        pairs = [(group.element(x), w) for x, w in pairs]
        merged = _torus_merge(group, pairs)
        keys = sorted(merged)
    else:
        merged = {}
        for x, w in pairs:
            x = tuple(x)
            merged[x] = merged[x] + w if x in merged else w
        keys = sorted(merged, key=group.index)
    keys = [k for k in keys if merged[k] != 0]
    return AtomicMeasure(group, tuple(keys), tuple(merged[k] for k in keys))


def from_dense(group: Group, vec: np.ndarray) -> AtomicMeasure:
    idx = np.flatnonzero(vec > 0)
    els = group._elements
    out = AtomicMeasure._trusted(group, tuple(els[i] for i in idx), tuple(vec[idx].tolist()))
    out.__dict__["indices"] = idx
    return out


def zero_measure(group: Group) -> AtomicMeasure:
    return AtomicMeasure(group, (), ())


def dirac(group: Group, x=None, weight=1.0) -> AtomicMeasure:
    x = group.zero() if x is None else x
    return AtomicMeasure(group, (x,), (weight,))


@lru_cache(maxsize=64)
def uniform(group: Group, exact: bool = False) -> AtomicMeasure:
    """Haar measure of a finite group as an atomic measure (cached; measures are immutable)."""
    n = group.order
    w = Fraction(1, n) if exact else 1.0 / n
    return AtomicMeasure(group, tuple(group.elements()), (w,) * n)


def uniform_on(group: Group, points: Sequence, exact: bool = False) -> AtomicMeasure:
    n = len(points)
    w = Fraction(1, n) if exact else 1.0 / n
    return from_pairs(group, [(x, w) for x in points])


def signed_difference(mu: AtomicMeasure, nu: AtomicMeasure) -> dict:
    """Atomwise ``mu - nu`` as a dict over the union of atoms (zeros kept)."""
    g = _same_group(mu, nu)
    if isinstance(g, Torus):
        return _torus_merge(g, list(mu) + [(x, -w) for x, w in nu])
    out = dict(mu.as_dict())
    for x, w in nu:
        out[x] = out.get(x, 0) - w
    return out


def _convolve_dense(mu: AtomicMeasure, nu: AtomicMeasure) -> AtomicMeasure:
    g = mu.group
    ia, ib = mu.indices, nu.indices
    sums = g.addition_table[np.ix_(ia, ib)].ravel()
    w = np.outer(mu.weight_array(), nu.weight_array()).ravel()
    return from_dense(g, np.bincount(sums, weights=w, minlength=g.order))


def convolve(mu: AtomicMeasure, nu: AtomicMeasure, atom_cap: int = DEFAULT_ATOM_CAP) -> AtomicMeasure:
    """Distribution of the sum of independent draws from ``mu`` and ``nu``.

    Total mass multiplies.  On the torus the number of atoms can grow like the
    product of the input sizes; inputs whose product exceeds ``atom_cap`` are
    refused with :class:`AtomCapExceeded`.
    """
    g = _same_group(mu, nu)
    if not mu.points or not nu.points:
        return zero_measure(g)
    if g.finite and not (mu.exact and nu.exact) and g.order <= 4096:
        return _convolve_dense(mu, nu)
    if not g.finite and len(mu) * len(nu) > atom_cap:
        raise AtomCapExceeded(
            f"convolution of {len(mu)} x {len(nu)} atoms exceeds the cap of {atom_cap}; "
            "use Monte Carlo instead")
    a = mu.encoded()
    b = nu.encoded()
    s = g.add_arrays(a[:, None, :], b[None, :, :]).reshape(-1, a.shape[1])
    pts = g.decode(s)
    ws = [wa * wb for wa in mu.weights for wb in nu.weights]
    out = from_pairs(g, zip(pts, ws))
    if len(out) > atom_cap:
        raise AtomCapExceeded(f"convolution produced {len(out)} atoms, cap is {atom_cap}")
    return out


def convolve_power(mu: AtomicMeasure, n: int, atom_cap: int = DEFAULT_ATOM_CAP) -> AtomicMeasure:
    """n-fold convolution; ``n = 0`` gives the Dirac mass at zero."""
    if n < 0:
        raise ValueError("n must be >= 0")
    exact = mu.exact
    out = dirac(mu.group, weight=Fraction(1) if exact else 1.0)
    for _ in range(n):
        out = convolve(mu, out, atom_cap)
    return out


def convolve_sequence(measures: Sequence[AtomicMeasure], atom_cap: int = DEFAULT_ATOM_CAP) -> AtomicMeasure:
    """Left fold ``mu_k * ... * mu_2 * mu_1`` of a nonempty list ``[mu_1, ..., mu_k]``."""
    if not measures:
        raise ValueError("convolve_sequence needs at least one measure")
    _same_group(*measures)
    out = measures[0]
    for m in measures[1:]:
        out = convolve(m, out, atom_cap)
    return out


def support(nu: AtomicMeasure) -> frozenset:
    return frozenset(x for x, w in nu if w > 0)


def sum_set(g: Group, a: Iterable, b: Iterable) -> frozenset:
    """Minkowski sum of two finite element sets (torus points merged like atoms)."""
    a, b = list(a), list(b)
    if not a or not b:
        return frozenset()
    if isinstance(g, Torus):
        pairs = [(g.add(x, y), 1) for x in a for y in b]
        return frozenset(_torus_merge(g, pairs))
    ea, eb = g.encode(a), g.encode(b)
    s = g.add_arrays(ea[:, None, :], eb[None, :, :]).reshape(-1, ea.shape[1])
    return frozenset(g.decode(np.unique(s, axis=0)))


def total_variation(mu: AtomicMeasure, nu: AtomicMeasure) -> float:
    """Half the l1 distance between two probability measures."""
    _same_group(mu, nu)
    for m in (mu, nu):
        if not m.is_probability():
            raise ValueError(f"total_variation needs probability measures, got mass {m.total_mass}")
    diff = signed_difference(mu, nu)
    return 0.5 * math.fsum(abs(float(w)) for w in diff.values())


def empirical_measure(group: Group, samples: Sequence) -> AtomicMeasure:
    """Equal weights 1/n on the samples, repeated samples merged."""
    if len(samples) == 0:
        raise ValueError("empirical_measure needs at least one sample")
    n = len(samples)
    counts: dict = {}
    for x in samples:
        x = tuple(x)
        counts[x] = counts.get(x, 0) + 1
    return from_pairs(group, [(x, c / n) for x, c in counts.items()])


def add_measures(*measures: AtomicMeasure) -> AtomicMeasure:
    g = _same_group(*measures)
    return from_pairs(g, [p for m in measures for p in m])


@dataclass(frozen=True)
class SamplerMeasure:
    """A measure known only through a seeded sampling rule.

    ``draw(rng, size)`` returns encoded group elements of shape
    ``(size, coords)``.  ``declared_support`` is a finite tuple of atoms,
    ``"full"``, or ``None`` when unknown.
    """

    group: Group
    draw: Callable[[np.random.Generator, int], np.ndarray]
    declared_support: tuple | str | None = None

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return self.draw(rng, size)


def atomic_sampler(mu: AtomicMeasure) -> SamplerMeasure:
    """Sampler drawing i.i.d. atoms of a probability measure."""
    if not mu.is_probability():
        raise ValueError("can only sample from probability measures")
    pts = mu.encoded()
    p = mu.weight_array()
    p = p / p.sum()
    cdf = np.cumsum(p)
    cdf[-1] = 1.0

    def draw(rng, size):
        if len(pts) == 1:
            return np.repeat(pts, size, axis=0)
        return pts[np.searchsorted(cdf, rng.random(size), side="right")]

    return SamplerMeasure(mu.group, draw, mu.points)


def haar_sampler(group: Group) -> SamplerMeasure:
    return SamplerMeasure(group, group.haar_sample_array, "full")


@dataclass(frozen=True)
class MeasureFamily:
    """Finite family K of probability measures on one group."""

    members: tuple

    def __post_init__(self):
        members = tuple(self.members)
        if not members:
            raise ValueError("a measure family needs at least one member")
        _same_group(*members)
        for m in members:
            if not m.is_probability():
                raise ValueError(f"family members must be probability measures (mass {m.total_mass})")
        object.__setattr__(self, "members", members)

    @property
    def group(self) -> Group:
        return self.members[0].group

    def __len__(self):
        return len(self.members)

    def __getitem__(self, i):
        return self.members[i]

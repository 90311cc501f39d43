"""Hypothesis strategies and random generators shared by the tests."""
from __future__ import annotations

from fractions import Fraction

import numpy as np
from hypothesis import strategies as st

from abelwalk.groups import DyadicCantor, FiniteAbelian, PAdicInt, Torus
from abelwalk.measures import from_pairs

finite_groups = st.one_of(
    st.lists(st.integers(2, 7), min_size=1, max_size=3).map(lambda m: FiniteAbelian(tuple(m))),
    st.integers(1, 5).map(DyadicCantor),
    st.tuples(st.sampled_from([2, 3, 5]), st.integers(1, 3)).map(lambda t: PAdicInt(*t)),
)
tori = st.integers(1, 3).map(Torus)
groups = st.one_of(finite_groups, tori)


@st.composite
def elements(draw, g):
    if isinstance(g, Torus):
        return g.element(tuple(draw(st.floats(0, 1, exclude_max=True)) for _ in range(g.dimension)))
    return g.element(draw(st.integers(0, g.order - 1)))


@st.composite
def group_and_elements(draw, k=3, group_strategy=groups):
    g = draw(group_strategy)
    return (g, *[draw(elements(g)) for _ in range(k)])


@st.composite
def atomic_measures(draw, g, max_atoms=5, exact=False):
    pts = draw(st.lists(elements(g), min_size=1, max_size=max_atoms, unique=True))
    if exact:
        raw = [Fraction(draw(st.integers(1, 9))) for _ in pts]
    else:
        raw = [draw(st.floats(0.05, 1.0)) for _ in pts]
    total = sum(raw)
    return from_pairs(g, [(x, w / total) for x, w in zip(pts, raw)])


def random_finite_group(rng, max_order=64):
    while True:
        kind = rng.integers(0, 4)
        if kind == 0:
            g = FiniteAbelian((int(rng.integers(2, max_order + 1)),))
        elif kind == 1:
            g = FiniteAbelian(tuple(int(m) for m in rng.integers(2, 7, size=int(rng.integers(2, 4)))))
        elif kind == 2:
            g = DyadicCantor(int(rng.integers(1, 7)))
        else:
            p = int(rng.choice([2, 3, 5, 7]))
            g = PAdicInt(p, int(rng.integers(1, 4)))
        if g.order <= max_order:
            return g


def random_measure(rng, g, max_atoms=6, exact=False):
    k = int(rng.integers(1, min(max_atoms, g.order) + 1))
    idx = rng.choice(g.order, size=k, replace=False)
    if exact:
        w = [Fraction(int(x)) for x in rng.integers(1, 10, size=k)]
        total = sum(w)
        return from_pairs(g, [(g.element(int(i)), x / total) for i, x in zip(idx, w)])
    w = rng.uniform(0.05, 1.0, size=k)
    w = w / w.sum()
    return from_pairs(g, [(g.element(int(i)), float(x)) for i, x in zip(idx, w)])

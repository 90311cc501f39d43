"""Strict aperiodicity and support-density checks.

A measure is strictly aperiodic when the differences of its support atoms
generate a dense subgroup.  The difference set is symmetric and contains 0, so
the semigroup it generates is already a group; on finite groups we compute the
generated subgroup by closure.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .groups import METRIC_TOL, FiniteAbelian, Group, GroupMismatch, Torus
from .measures import AtomicMeasure, _same_group, support, sum_set

APERIODIC = "aperiodic"
NOT_APERIODIC = "not_aperiodic"
UNDECIDED = "undecided"

EXACT_FINITE = "exact_finite"
RATIONALIZED_TORUS = "rationalized_torus"
DECLARED_IRRATIONAL = "declared_irrational"


class HypothesisError(ValueError):
    """The input violates a hypothesis the operation depends on."""


class CapExceeded(RuntimeError):
    pass


@dataclass(frozen=True)
class Witness:
    """A proper closed subgroup H and a coset ``offset + H`` containing the support.

    ``subgroup`` is an explicit element set when it is small enough to list;
    ``generators`` always describes H.
    """

    generators: tuple
    offset: tuple
    subgroup: frozenset | None = None
    description: str = ""


@dataclass(frozen=True)
class AperiodicityVerdict:
    verdict: str
    method: str
    witness: Witness | None = None
    reason: str = ""

    def __post_init__(self):
        if self.verdict == NOT_APERIODIC and self.witness is None:
            raise ValueError("a not_aperiodic verdict must carry a witness")
        if self.method in (EXACT_FINITE, RATIONALIZED_TORUS) and self.verdict == UNDECIDED:
            raise ValueError(f"{self.method} verdicts are never undecided")

    @property
    def exit_code(self) -> int:
        return {APERIODIC: 0, NOT_APERIODIC: 1, UNDECIDED: 2}[self.verdict]


def difference_set(mu: AtomicMeasure) -> frozenset:
    g = mu.group
    pts = list(support(mu))
    if isinstance(g, Torus):
        return frozenset(g.sub(a, b) for a in pts for b in pts)
    enc = g.encode(pts)
    diff = np.mod(enc[:, None, :] - enc[None, :, :], g.array_moduli).reshape(-1, enc.shape[1])
    return frozenset(g.decode(np.unique(diff, axis=0)))


def generated_subgroup(S, g: Group) -> frozenset:
    """Closure of ``S`` (plus 0) under addition in a finite group."""
    if not g.finite:
        raise GroupMismatch("generated_subgroup needs a finite group")
    gens = [s for s in S if s != g.zero()]
    table = g.addition_table
    member = np.zeros(g.order, bool)
    member[g.index(g.zero())] = True
    gen_idx = np.array([g.index(s) for s in gens], dtype=np.int64)
    frontier = np.flatnonzero(member)
    while frontier.size and gen_idx.size:
        new = np.unique(table[np.ix_(frontier, gen_idx)])
        new = new[~member[new]]
        member[new] = True
        frontier = new
    return frozenset(g.decode(g.index_to_array(np.flatnonzero(member))))


def coset_floor(g: Group, H) -> float:
    """Lower bound on W(nu, h) for any probability nu supported on a coset of H.

    Every unit of Haar mass must travel to the coset, so W >= int d(y, c + H) dh(y);
    by invariance this does not depend on c.
    """
    els = g.encode(g.elements())
    hs = g.encode(list(H))
    d = g.metric_array(els[:, None, :], hs[None, :, :]).min(axis=1)
    return float(d.mean())


def _rationalize(c: float, max_denominator: int) -> Fraction | None:
    f = Fraction(c).limit_denominator(max_denominator)
    return f if abs(float(f) - c) <= 1e-12 else None


def is_strictly_aperiodic(mu: AtomicMeasure, irrational: Sequence[bool] | None = None,
                          max_denominator: int = 10_000) -> AperiodicityVerdict:
    """Decide strict aperiodicity.

    Finite groups are decided exactly.  On a torus, coordinates are either
    recognised as rationals with denominator at most ``max_denominator`` (then
    the support lies in a coset of a finite subgroup: not aperiodic), or must be
    declared irrational via ``irrational``.  A declaration means the nonzero
    differences in that coordinate, together with 1, are rationally
    independent; a difference vector whose every coordinate is nonzero and
    declared irrational then generates a dense subgroup (Kronecker).
    Anything else is ``undecided``.
    """
    g = mu.group
    if not mu.is_probability():
        raise ValueError("is_strictly_aperiodic needs a probability measure")
    D = difference_set(mu)
    anchor = min(support(mu))
    if g.finite:
        H = generated_subgroup(D, g)
        if len(H) == g.order:
            return AperiodicityVerdict(APERIODIC, EXACT_FINITE)
        return AperiodicityVerdict(
            NOT_APERIODIC, EXACT_FINITE,
            Witness(tuple(sorted(D)), anchor, H, f"support lies in a coset of a subgroup of order {len(H)}"))

    d = g.dimension
    flags = tuple(irrational) if irrational is not None else (False,) * d
    if len(flags) != d:
        raise ValueError("need one irrationality flag per torus coordinate")
    nonzero = [v for v in D if v != g.zero()]
    if not nonzero:
        rational_atom = all(_rationalize(c, max_denominator) is not None for c in anchor)
        return AperiodicityVerdict(
            NOT_APERIODIC, RATIONALIZED_TORUS if rational_atom else DECLARED_IRRATIONAL,
            Witness((), anchor, frozenset({g.zero()}), "single atom: coset of the trivial subgroup"))

    rational = [[_rationalize(c, max_denominator) for c in v] for v in nonzero]
    if all(f is not None for row in rational for f in row) and not any(flags):
        dens = [math.lcm(*(f.denominator for f in col)) for col in zip(*rational)]
        gens = tuple(tuple(str(f) for f in row) for row in rational)
        return AperiodicityVerdict(
            NOT_APERIODIC, RATIONALIZED_TORUS,
            Witness(gens, anchor, None,
                    "differences lie in the finite subgroup "
                    + " x ".join(f"(1/{q})Z/Z" for q in dens)))
    for v in nonzero:
        if all(c != 0.0 and flags[i] for i, c in enumerate(v)):
            return AperiodicityVerdict(APERIODIC, DECLARED_IRRATIONAL,
                                       reason=f"difference {v} has all coordinates declared irrational")
    return AperiodicityVerdict(UNDECIDED, DECLARED_IRRATIONAL,
                               reason="torus support with undeclared or mixed coordinates")


def is_eps_dense(S, g: Group, eps: float) -> bool:
    """Is every point of ``g`` within ``eps`` of ``S``?

    Exact on finite groups.  On a torus a grid of spacing eps/4 is checked
    against the shrunken radius eps - eps/8, so ``True`` is certified and
    ``False`` may be conservative.
    """
    S = list(S)
    if not S:
        raise ValueError("S must be nonempty")
    s = g.encode(S)
    if g.finite:
        pts = g.encode(g.elements())
        thresh = eps + METRIC_TOL
    else:
        k = max(2, math.ceil(4.0 / eps))
        axes = [np.arange(k) / k] * g.dimension
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, g.dimension)
        thresh = eps - 0.5 / k
    for chunk in np.array_split(pts, max(1, len(pts) // 4096)):
        dist = g.metric_array(chunk[:, None, :], s[None, :, :]).min(axis=1)
        if np.any(dist > thresh):
            return False
    return True


def minimal_dense_power(mu: AtomicMeasure, eps: float, cap: int = 10_000,
                        verdict: AperiodicityVerdict | None = None) -> int:
    """Smallest m with supp(mu^{*m}) eps-dense."""
    verdict = verdict or is_strictly_aperiodic(mu)
    if verdict.verdict != APERIODIC:
        raise HypothesisError(f"measure is not strictly aperiodic ({verdict.verdict})")
    g = mu.group
    base = support(mu)
    S = base
    for m in range(1, cap + 1):
        if is_eps_dense(S, g, eps):
            return m
        S = sum_set(g, S, base)
    raise CapExceeded(f"no eps-dense power found up to m = {cap}")


def sequence_support_dense(measures: Sequence[AtomicMeasure], eps: float) -> bool:
    """Is supp(mu_m * ... * mu_1) eps-dense?  Works on supports only."""
    g = _same_group(*measures)
    S = support(measures[0])
    for m in measures[1:]:
        S = sum_set(g, S, support(m))
    return is_eps_dense(S, g, eps)


def support_inclusion_with_radius(mu: AtomicMeasure, mu_tilde: AtomicMeasure, eps: float) -> bool:
    """supp(mu) inside supp(mu_tilde) + B(0, eps), with the open ball."""
    g = _same_group(mu, mu_tilde)
    a = g.encode(list(support(mu)))
    b = g.encode(list(support(mu_tilde)))
    if len(a) == 0:
        return True
    if len(b) == 0:
        return False
    d = g.metric_array(a[:, None, :], b[None, :, :]).min(axis=1)
    return bool(np.all(d < eps))


def inclusion_delta(mu: AtomicMeasure, eps: float) -> float:
    """A W1 radius below which every perturbation keeps supp(mu) within eps.

    If some support atom x of mu is at distance >= eps from supp(mu~), every
    coupling moves the mass of B(x, eps/2) at least eps/2, so
    W(mu, mu~) >= mu(B(x, eps/2)) * eps/2.  The minimum over atoms is returned.
    """
    g = mu.group
    pts = mu.encoded()
    w = mu.weight_array()
    d = g.metric_array(pts[:, None, :], pts[None, :, :])
    ball = (d < eps / 2) @ w
    return float(ball.min() * eps / 2)

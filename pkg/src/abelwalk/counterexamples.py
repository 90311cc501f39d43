"""Two walks on the circle that do not converge to Haar measure.

``dirac_rotation``: mu = delta_alpha.  mu^n = delta_{n alpha} is a single atom
for every n, so W(mu^n, h) is the Dirac-to-Haar distance, 1/4 on the circle.

``shrinking_support``: mu_k = (delta_0 + delta_{alpha / 2^k}) / 2.  Every atom of
mu_n * ... * mu_1 is c alpha with c a dyadic rational in [0, 1 - 2^-n], so the
support never leaves [0, alpha] and is never eps-dense for eps < (1 - alpha)/2.
Coefficients are tracked exactly as integers over 2^n.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .aperiodicity import sequence_support_dense
from .groups import Torus
from .measures import convolve, convolve_power, dirac, from_pairs
from .wasserstein import dirac_to_haar, w1_circle_to_haar

ENUMERATE_UP_TO = 20
FLOAT_CHECK_UP_TO = 12


@dataclass(frozen=True)
class RotationRow:
    n: int
    position: float
    w1: float
    expected: float


def dirac_rotation(alpha: float, n_max: int) -> list[RotationRow]:
    """W(delta_alpha^{*n}, h) for n = 1..n_max, by the exact circle formula."""
    g = Torus(1)
    mu = dirac(g, (alpha,))
    expected = dirac_to_haar(g)
    rows = []
    for n in range(1, n_max + 1):
        p = convolve_power(mu, n)
        rows.append(RotationRow(n, p.points[0][0], w1_circle_to_haar(p), expected))
    return rows


@dataclass(frozen=True)
class ShrinkingRow:
    n: int
    max_coefficient: Fraction   # largest c with c * alpha an atom
    bound: Fraction             # 1 - 2^-n
    max_atom: float
    atom_bound: float           # alpha (1 - 2^-n)
    atoms: int                  # 2^n distinct atoms
    enumerated: bool            # all coefficients listed, not just the max
    float_checked: bool         # float torus convolution also checked
    dense: bool | None          # eps-density of the float support, when checked

    @property
    def below(self) -> bool:
        return self.max_coefficient <= self.bound < 1


def shrinking_family(alpha: float, n: int) -> list:
    g = Torus(1)
    return [from_pairs(g, [((0.0,), 0.5), ((alpha / 2 ** k,), 0.5)]) for k in range(1, n + 1)]


def shrinking_support(alpha: float, n_max: int, eps: float) -> list[ShrinkingRow]:
    """Exact support bookkeeping for the shrinking family, n = 1..n_max.

    For n <= ENUMERATE_UP_TO every coefficient numerator is listed (step k
    maps the numerator set S to 2S and 2S + 1); beyond that the maximum is
    tracked by max(A + B) = max A + max B.  For n <= FLOAT_CHECK_UP_TO the
    float convolution on the torus is run as well.
    """
    rows = []
    numerators = np.zeros(1, dtype=np.int64)
    max_num = 0
    family = shrinking_family(alpha, min(n_max, FLOAT_CHECK_UP_TO))
    law = None
    for n in range(1, n_max + 1):
        enumerated = n <= ENUMERATE_UP_TO
        if enumerated:
            numerators = np.concatenate([2 * numerators, 2 * numerators + 1])
            max_num = int(numerators.max())
            count = len(np.unique(numerators))
        else:
            max_num = 2 * max_num + 1
            count = 2 ** n
        cmax = Fraction(max_num, 2 ** n)
        bound = 1 - Fraction(1, 2 ** n)
        float_checked = n <= FLOAT_CHECK_UP_TO
        dense = None
        max_atom = float(cmax) * alpha
        if float_checked:
            law = family[0] if law is None else convolve(family[n - 1], law)
            max_atom = max(p[0] for p in law.points)
            dense = sequence_support_dense([law], eps)
        rows.append(ShrinkingRow(n, cmax, bound, max_atom, alpha * float(bound), count,
                                 enumerated, float_checked, dense))
    return rows

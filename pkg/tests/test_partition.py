from fractions import Fraction

import numpy as np
import pytest

from abelwalk.aperiodicity import APERIODIC, CapExceeded, HypothesisError, is_strictly_aperiodic
from abelwalk.groups import DyadicCantor, FiniteAbelian, GroupMismatch, Torus
from abelwalk.measures import convolve, convolve_sequence, dirac, from_pairs, uniform, uniform_on
from abelwalk.partition import (
    contraction_certificate,
    decompose,
    WideSetPartition,
    rounds_needed,
    vitali_partition,
    wide_set_mass_lower_bound,
)
from abelwalk.wasserstein import w1_to_haar
from oracles import check_partition, check_torus_partition
from strategies import random_finite_group, random_measure

Z2 = FiniteAbelian((2,))
Z4 = FiniteAbelian((4,))
T1 = Torus(1)
HALF = Fraction(1, 2)
LAZY_Z2 = from_pairs(Z2, [((0,), HALF), ((1,), HALF)])


def test_z2_half():
    P = vitali_partition(Z2, 0.5)
    assert set(P.cells) == {frozenset({(0,)}), frozenset({(1,)})}
    check_partition(P)


def test_torus_half():
    P = vitali_partition(T1, 0.5)
    assert len(P) == 2 and P.masses == (0.5, 0.5)
    assert P.cell_of((0.0,)) == 0 and P.cell_of((0.49,)) == 0 and P.cell_of((0.5,)) == 1
    for (c, r), (c2, r2) in zip(P.outer, P.inner):
        assert r == 0.5 and r2 == pytest.approx(0.25) and r2 >= 0.5 / 3


def test_partitions_over_groups(rng):
    for _ in range(40):
        g = random_finite_group(rng, 64)
        for eps in (0.05, 0.1, 0.25, 0.5):
            if eps > g.diameter():
                continue
            P = vitali_partition(g, eps)
            check_partition(P)
    for d in (1, 2):
        for eps in (0.1, 0.3, 0.5):
            P = vitali_partition(Torus(d), eps)
            assert P.verify()
            check_torus_partition(P, rng, 300)


def test_partition_errors():
    with pytest.raises(ValueError):
        vitali_partition(Z2, 0.0)
    with pytest.raises(ValueError):
        vitali_partition(Z2, 0.75)
    with pytest.raises(CapExceeded, match="too fine"):
        vitali_partition(Torus(3), 0.001)
    # a small eps on a finite group just gives singletons
    assert len(vitali_partition(FiniteAbelian((5,)), 1e-6)) == 5


def test_mass_lower_bound_examples():
    assert wide_set_mass_lower_bound(uniform(Z2, exact=True), 0.5) == HALF
    assert wide_set_mass_lower_bound(dirac(Z2), 0.5) == 0
    g = FiniteAbelian((12,))
    for eps in (0.1, 0.3, 0.6):
        assert wide_set_mass_lower_bound(uniform(g), eps) == pytest.approx(g.haar_ball_mass(eps / 3))
    assert wide_set_mass_lower_bound(dirac(T1), 0.3) == 0
    grid = uniform_on(T1, [(k / 20,) for k in range(20)])
    assert 0 < wide_set_mass_lower_bound(grid, 0.5) <= 6 / 20


def test_mass_lower_bound_is_a_lower_bound(rng):
    for _ in range(30):
        g = random_finite_group(rng, 32)
        nu = random_measure(rng, g, 8)
        eps = float(rng.choice([0.1, 0.25, 0.5]))
        if eps > g.diameter():
            continue
        delta = wide_set_mass_lower_bound(nu, eps)
        P = vitali_partition(g, eps)
        w = nu.as_dict()
        for cell in P.cells:
            assert sum(w.get(x, 0) for x in cell) >= delta - 1e-12


def test_decompose_examples():
    P = vitali_partition(Z2, 0.5)
    u = uniform(Z2, exact=True)
    dec = decompose(u, P, 1)
    assert dec.nu1.as_dict() == u.as_dict() and dec.nu0.total_mass == 0
    g = FiniteAbelian((3,))
    # eps >= diameter: the whole group is one eps-wide cell
    P1 = WideSetPartition(g, g.diameter(), (frozenset(g.elements()),), (((0,), g.diameter()),),
                          (((0,), g.diameter() / 3),), (Fraction(1),), labels=np.zeros(3, dtype=int))
    assert P1.verify()
    nu = from_pairs(g, [((0,), Fraction(1, 6)), ((2,), Fraction(5, 6))])
    dec = decompose(nu, P1, Fraction(1, 4))
    assert dec.nu1.as_dict() == {x: w / 4 for x, w in nu.as_dict().items()}
    with pytest.raises(HypothesisError, match="wide-set mass hypothesis violated"):
        decompose(dirac(Z2), P, 0.1)
    with pytest.raises(HypothesisError):
        decompose(from_pairs(Z2, [((0,), 0.9), ((1,), 0.1)]), P, 0.5)
    with pytest.raises(GroupMismatch):
        decompose(uniform(Z4), P, 0.1)


def test_decompose_properties(rng):
    for _ in range(50):
        g = random_finite_group(rng, 32)
        eps = 0.5 if g.diameter() >= 0.5 else g.diameter()
        P = vitali_partition(g, eps)
        exact = bool(rng.integers(0, 2))
        nu = random_measure(rng, g, g.order, exact=exact)
        masses = [sum(nu.as_dict().get(x, 0) for x in c) for c in P.cells]
        if min(masses) == 0:
            continue
        top = min(m / h for m, h in zip(masses, P.masses))
        delta = top * Fraction(int(rng.integers(1, 5)), 4) if exact else float(top) * rng.uniform(0.1, 1)
        dec = decompose(nu, P, delta)
        n0, n1 = dec.nu0.as_dict(), dec.nu1.as_dict()
        for x, w in nu.as_dict().items():
            assert abs(n0.get(x, 0) + n1.get(x, 0) - w) <= 1e-12
            assert n0.get(x, 0) >= 0
        for c, h in zip(P.cells, P.masses):
            assert abs(sum(n1.get(x, 0) for x in c) - delta * h) <= 1e-12
        assert abs(dec.nu1.total_mass - delta) <= 1e-12
        assert dec.coupling_cost <= eps + 1e-12
        if exact:
            assert dec.nu0.total_mass + dec.nu1.total_mass == 1


def test_rounds_needed():
    assert rounds_needed(HALF, 0.5) == 2
    assert rounds_needed(1, 0.1) == 1
    for d in (0.01, 0.1, 0.3):
        r = rounds_needed(d, 0.25)
        assert (1 - d) ** r < 0.25 <= (1 - d) ** (r - 2)


def test_certificate_z2_lazy():
    cert = contraction_certificate([LAZY_Z2] * 10, dirac(Z2, weight=Fraction(1)), 0.5)
    assert cert.m == 1 and cert.delta == HALF and cert.r == 2
    assert cert.bound == 0.75 and cert.holds and cert.final_w1 == 0
    assert cert.residual_masses == (1, HALF, Fraction(1, 4))
    assert cert.measured_residual_masses == (1.0, 0.5, 0.25)


def test_certificate_uniform_start():
    g = FiniteAbelian((6,))
    lazy = from_pairs(g, [((0,), 0.5), ((1,), 0.5)])
    cert = contraction_certificate(lambda n: lazy, uniform(g), 0.25)
    assert cert.final_w1 == pytest.approx(0, abs=1e-12) and cert.holds


def test_certificate_exact_mode_residuals():
    cases = [
        (Z4, from_pairs(Z4, [((0,), HALF), ((1,), HALF)]), 0.5),
        (DyadicCantor(2), None, 0.5),
        (FiniteAbelian((3,)), None, 0.25),
    ]
    for g, mu, eps in cases:
        if mu is None:
            mu = uniform_on(g, [g.element(0), g.element(1), g.element(g.order - 1)], exact=True)
        cert = contraction_certificate(lambda n: mu, dirac(g, weight=Fraction(1)), eps)
        assert isinstance(cert.delta, Fraction)
        assert cert.measured_residual_masses == tuple(float(x) for x in cert.residual_masses)
        assert all(a > b for a, b in zip(cert.residual_masses, cert.residual_masses[1:]))
        assert cert.holds and cert.coupling_bound <= cert.bound + 1e-12


def test_certificate_random_float(rng):
    done = 0
    while done < 8:
        g = random_finite_group(rng, 16)
        fam = [random_measure(rng, g, 6) for _ in range(2)]
        if not any(is_strictly_aperiodic(m).verdict == APERIODIC for m in fam):
            continue
        if is_strictly_aperiodic(convolve_sequence(fam)).verdict != APERIODIC:
            continue
        eps = 0.25 if g.diameter() >= 0.25 else g.diameter()
        nu = random_measure(rng, g, 3)
        cert = contraction_certificate(lambda n: fam[(n - 1) % 2], nu, eps)
        assert cert.holds
        for a, b in zip(cert.measured_residual_masses, cert.residual_masses):
            assert abs(a - float(b)) <= 1e-12
        done += 1


def test_certificate_errors():
    with pytest.raises(HypothesisError):
        contraction_certificate(lambda n: dirac(Z2, (1,)), dirac(Z2), 0.5, m_cap=8)
    with pytest.raises(HypothesisError):
        contraction_certificate([LAZY_Z2], dirac(Z2, weight=Fraction(1)), 0.2)
    with pytest.raises(GroupMismatch):
        contraction_certificate([dirac(T1)], dirac(T1), 0.5)


def test_certificate_to_dict():
    cert = contraction_certificate([LAZY_Z2] * 4, dirac(Z2, weight=Fraction(1)), 0.5)
    d = cert.to_dict()
    assert d["delta_exact"] == "1/2" and d["holds"] and d["residual_masses"] == [1.0, 0.5, 0.25]


def test_certificate_round_cap():
    g = FiniteAbelian((50,))
    lazy = from_pairs(g, [((0,), 0.5), ((1,), 0.5)])
    with pytest.raises(CapExceeded):
        contraction_certificate(lambda n: lazy, dirac(g), 0.02, max_rounds=10)


def test_block_choice_beats_first_feasible(rng):
    for _ in range(10):
        g = random_finite_group(rng, 32)
        mu = random_measure(rng, g, 4)
        if is_strictly_aperiodic(mu).verdict != APERIODIC:
            continue
        eps = 0.1 if g.diameter() >= 0.1 else g.diameter()
        nu = random_measure(rng, g, 3)
        law, m0 = nu, 0
        while True:
            m0 += 1
            law = convolve(mu, law)
            d0 = wide_set_mass_lower_bound(law, eps)
            if d0 > 0:
                break
        cert = contraction_certificate(lambda n: mu, nu, eps)
        assert cert.holds
        if cert.restarts == 0:  # restarts lower delta after the block length was chosen
            assert cert.m * cert.r <= m0 * rounds_needed(d0, eps)

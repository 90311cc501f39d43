"""Acceptance criteria 1-11, each with its stated tolerance and runtime limit.

Every test appends one ``ACCEPTANCE k: PASS|FAIL ...`` line to the terminal
summary and prints it.
"""
import math
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from fractions import Fraction

import numpy as np
import pytest

from abelwalk.aperiodicity import APERIODIC, coset_floor, is_strictly_aperiodic
from abelwalk.cli import main
from abelwalk.config import (
    GOLDEN,
    build_family,
    build_group,
    build_observable,
    build_schedule,
    build_start,
    load_config,
)
from abelwalk.counterexamples import dirac_rotation, shrinking_support
from abelwalk.groups import DyadicCantor, FiniteAbelian, PAdicInt, Torus
from abelwalk.measures import convolve, convolve_sequence, dirac, from_pairs, uniform
from abelwalk.partition import contraction_certificate, vitali_partition
from abelwalk.walk import CYCLIC, SEEDED_CHOICE, WalkSchedule, ld_tail_estimate, simulate_birkhoff
from abelwalk.wasserstein import convex_combination, w1, w1_exact, w1_to_haar
from acceptance_log import ACCEPTANCE_LINES
from oracles import (
    check_partition,
    check_torus_partition,
    circle_w1_exact,
    transport_by_vertices,
    z2_lazy_tail,
)
from strategies import random_finite_group, random_measure


@contextmanager
def criterion(k: int, title: str, limit: float):
    info: dict = {}
    t0 = time.perf_counter()

    def record(status, detail):
        line = f"ACCEPTANCE {k}: {status} {title} [{time.perf_counter() - t0:.1f}s / {limit:g}s] {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)

    try:
        yield info
    except BaseException as exc:
        record("FAIL", f"{type(exc).__name__}: {str(exc)[:160]}")
        raise
    elapsed = time.perf_counter() - t0
    if elapsed >= limit:
        record("FAIL", f"runtime {elapsed:.1f}s exceeds {limit:g}s")
        raise AssertionError(f"criterion {k} took {elapsed:.1f}s, limit {limit:g}s")
    record("PASS", info.get("detail", ""))


def _rng(k):
    return np.random.default_rng(1000 + k)


def test_1_haar_fixed_point():
    with criterion(1, "Haar fixed point", 5) as info:
        rng = _rng(1)
        for _ in range(200):
            g = random_finite_group(rng, 64)
            mu = random_measure(rng, g, 8, exact=True)
            h = uniform(g, exact=True)
            assert convolve(mu, h).as_dict() == h.as_dict()
            assert convolve(h, mu).as_dict() == h.as_dict()
        info["detail"] = "200/200 exact"


def test_2_transport_oracle():
    with criterion(2, "transport vs coupling-polytope vertices", 30) as info:
        rng = _rng(2)
        worst = 0.0
        for _ in range(200):
            g = random_finite_group(rng, 64)
            a, b = random_measure(rng, g, 4), random_measure(rng, g, 4)
            C = g.metric_array(a.encoded()[:, None, :], b.encoded()[None, :, :])
            ref = transport_by_vertices(a.weight_array(), b.weight_array(), C)
            worst = max(worst, abs(w1_exact(a, b)[0] - ref))
        assert worst <= 1e-10
        info["detail"] = f"max |diff| = {worst:.2e}"


def test_3_convolution_monotone():
    with criterion(3, "W(mu*nu, h) <= W(nu, h)", 30) as info:
        rng = _rng(3)
        worst = -math.inf
        for _ in range(500):
            g = random_finite_group(rng, 64)
            mu, nu = random_measure(rng, g, 6), random_measure(rng, g, 8)
            gap = w1_to_haar(convolve(mu, nu)) - w1_to_haar(nu)
            worst = max(worst, gap)
        assert worst <= 1e-10
        info["detail"] = f"max increase = {worst:.2e}"


def test_4_convexity():
    with criterion(4, "convexity of W in its first argument", 30) as info:
        rng = _rng(4)
        worst = -math.inf
        for _ in range(500):
            g = random_finite_group(rng, 64)
            a, b, c = (random_measure(rng, g, 5) for _ in range(3))
            t = float(rng.uniform(0, 1))
            gap = w1(convex_combination(t, a, b), c) - (t * w1(a, c) + (1 - t) * w1(b, c))
            worst = max(worst, gap)
        assert worst <= 1e-10
        info["detail"] = f"max violation = {worst:.2e}"


def _dichotomy_measure(rng, m: int, coset: bool):
    """Random atomic measure on Z/m, weights U[1, 2]; optionally inside a coset."""
    if coset:
        divisors = [d for d in range(2, m + 1) if m % d == 0]
        d = int(rng.choice(divisors))          # subgroup dZ/m of index d
        offset = int(rng.integers(0, d))
        pool = np.arange(offset, m, d)
    else:
        pool = np.arange(m)
    k = int(rng.integers(1, min(len(pool), 5) + 1))
    pts = rng.choice(pool, size=k, replace=False)
    w = rng.uniform(1, 2, size=k)
    w /= w.sum()
    return from_pairs(FiniteAbelian((m,)), [((int(x),), float(v)) for x, v in zip(pts, w)])


def test_5_dichotomy():
    with criterion(5, "aperiodic iff mu^n -> Haar on Z/m, m <= 12", 60) as info:
        rng = _rng(5)
        counts = {"aperiodic": 0, "not": 0}
        for m in range(2, 13):
            g = FiniteAbelian((m,))
            for i in range(50):
                mu = _dichotomy_measure(rng, m, coset=i % 3 == 0)
                v = is_strictly_aperiodic(mu)
                floor = None if v.verdict == APERIODIC else coset_floor(g, v.witness.subgroup)
                p, hit = mu, False
                for n in range(1, 501):
                    d = w1_to_haar(p)
                    if d < 1e-3:
                        hit = True
                        break
                    if floor is not None:
                        assert d >= floor - 1e-12, (m, mu, n, d, floor)
                    p = convolve(mu, p)
                assert hit == (v.verdict == APERIODIC), (m, mu.as_dict(), v.verdict)
                counts["aperiodic" if hit else "not"] += 1
        assert counts["not"] > 0 and counts["aperiodic"] > 0
        info["detail"] = f"{counts['aperiodic']} aperiodic, {counts['not']} not, all consistent"


def test_6_counterexamples():
    with criterion(6, "Dirac rotation and shrinking support", 10) as info:
        rows = dirac_rotation(GOLDEN, 100)
        worst = 0.0
        for r in rows:
            ref = circle_w1_exact([r.position], [1.0])
            worst = max(worst, abs(r.w1 - 0.25), abs(ref - 0.25))
        assert worst <= 1e-8
        srows = shrinking_support(GOLDEN, 30, 0.15)
        assert [r.n for r in srows] == list(range(1, 31))
        for r in srows:
            assert r.max_coefficient <= 1 - Fraction(1, 2 ** r.n) < 1
            assert r.max_atom <= GOLDEN * (1 - 2.0 ** -r.n) + 1e-15
        info["detail"] = f"rotation max err {worst:.1e}; 30/30 shrinking rows below alpha(1-2^-n)"


def _aperiodic_member(rng, g, max_atoms=8):
    while True:
        mu = random_measure(rng, g, max_atoms)
        if is_strictly_aperiodic(mu).verdict == APERIODIC:
            return mu


def _certificate_instance(rng):
    g = random_finite_group(rng, 32)
    family = tuple(_aperiodic_member(rng, g) for _ in range(int(rng.integers(1, 4))))
    if len(family) > 1 and rng.integers(0, 2):
        sched = WalkSchedule(family, SEEDED_CHOICE, seed=int(rng.integers(0, 2 ** 31)))
    else:
        pattern = tuple(int(i) for i in rng.integers(0, len(family), size=int(rng.integers(1, 5))))
        sched = WalkSchedule(family, CYCLIC, pattern)
    nu = random_measure(rng, g, 6)
    eps = float(rng.choice([e for e in (0.1, 0.25) if e <= g.diameter()]))
    return g, sched, nu, eps


def test_7_certificate_soundness():
    with criterion(7, "contraction certificate soundness", 120) as info:
        rng = _rng(7)
        worst_gap, worst_res = -math.inf, 0.0
        for _ in range(50):
            g, sched, nu, eps = _certificate_instance(rng)
            cert = contraction_certificate(sched, nu, eps)
            # recompute the final law independently of the certificate's bookkeeping
            law = nu
            for k in range(1, cert.m * cert.r + 1):
                law = convolve(sched(k), law)
            final = w1_to_haar(law)
            assert final == pytest.approx(cert.final_w1, abs=1e-12)
            assert cert.bound == (g.diameter() + 1) * eps
            assert final <= cert.bound + 1e-10
            worst_gap = max(worst_gap, final - cert.bound)
            # exact (1 - delta)^j bookkeeping against the float masses actually left
            assert cert.residual_masses == tuple((1 - cert.delta) ** j for j in range(cert.r + 1))
            assert all(a > b for a, b in zip(cert.residual_masses, cert.residual_masses[1:]))
            for a, b in zip(cert.measured_residual_masses, cert.residual_masses):
                worst_res = max(worst_res, abs(a - float(b)))
        assert worst_res <= 1e-12
        # exact arithmetic: the residual masses are (1 - delta)^j with no rounding at all
        exact_cases = [
            (FiniteAbelian((4,)), [((0,), Fraction(1, 2)), ((1,), Fraction(1, 2))], 0.25),
            (FiniteAbelian((2, 2)), [((0, 0), Fraction(1, 3)), ((1, 0), Fraction(1, 3)),
                                      ((0, 1), Fraction(1, 3))], 0.25),
            (DyadicCantor(2), [((0, 0), Fraction(1, 2)), ((1, 0), Fraction(1, 4)),
                               ((0, 1), Fraction(1, 4))], 0.1),
            (PAdicInt(3, 1), [((0,), Fraction(1, 2)), ((1,), Fraction(1, 2))], 0.25),
        ]
        for g, atoms, eps in exact_cases:
            mu = from_pairs(g, atoms)
            cert = contraction_certificate(lambda n: mu, dirac(g, weight=Fraction(1)), eps)
            assert isinstance(cert.delta, Fraction)
            assert cert.measured_residual_masses == tuple(float(x) for x in cert.residual_masses)
            assert cert.holds
        info["detail"] = (f"50/50 within (Diam+1)eps (max W - bound = {worst_gap:.3g}); "
                          f"float residuals within {worst_res:.1e} of (1-delta)^j; "
                          f"{len(exact_cases)} exact-arithmetic runs equal exactly")


def _preset_walk(name):
    cfg = load_config(preset=name)
    g = build_group(cfg)
    sched = build_schedule(cfg, build_family(cfg, g), cfg.get("seed"))
    return cfg, sched, build_observable(cfg, g), build_start(cfg, g)


def test_8_ergodic_theorem():
    with criterion(8, "Birkhoff deviation < 0.05 in >= 95/100 seeds", 120) as info:
        parts = []
        with ThreadPoolExecutor(max_workers=4) as pool:
            for name in ("z2-lazy", "z8-lazy", "torus-golden"):
                cfg, sched, phi, x0 = _preset_walk(name)
                assert not phi.is_trivial_character
                reports = list(pool.map(lambda s: simulate_birkhoff(x0, sched, phi, 100_000, s),
                                        range(1, 101)))
                good = sum(r.deviation < 0.05 for r in reports)
                assert good >= 95, (name, good)
                parts.append(f"{name} {good}/100")
        info["detail"] = ", ".join(parts)


def test_9_large_deviation_decay():
    with criterion(9, "LD tail decay, Z/2 lazy, eps = 0.2", 300) as info:
        cfg, sched, phi, x0 = _preset_walk("z2-lazy")
        est = ld_tail_estimate(sched, phi, x0, 0.2, [20, 40, 80, 160], 100_000, seed=cfg["seed"],
                               threads=4)
        fit = est.fit
        assert fit.slope < 0
        assert fit.rate > 2 * fit.slope_se
        for row in est.rows:
            exact = z2_lazy_tail(row.n, 0.2)
            assert row.ci_lo <= exact <= row.ci_hi, (row, exact)
        info["detail"] = (f"delta-hat = {fit.rate:.4f} +- {fit.slope_se:.4f}; "
                          f"exact tail inside all {len(est.rows)} Wilson intervals")


def test_10_partition_validity():
    with criterion(10, "vitali partitions over groups x eps", 10) as info:
        rng = _rng(10)
        groups = [FiniteAbelian((m,)) for m in (2, 3, 7, 16, 31)]
        groups += [FiniteAbelian((4, 6)), FiniteAbelian((2, 3, 5)), DyadicCantor(5),
                   PAdicInt(2, 4), PAdicInt(3, 3), PAdicInt(5, 2)]
        cases = 0
        for g in groups:
            for eps in (0.02, 0.05, 0.1, 0.2, 0.25, 0.3, 0.4, 0.5):
                if eps > g.diameter():
                    continue
                check_partition(vitali_partition(g, eps))
                cases += 1
        for d, eps_list in ((1, (0.01, 0.1, 0.3, 0.5)), (2, (0.05, 0.2, 0.5)), (3, (0.1, 0.5))):
            for eps in eps_list:
                check_torus_partition(vitali_partition(Torus(d), eps), rng, 500)
                cases += 1
        info["detail"] = f"{cases} (group, eps) cases"


def test_11_determinism(tmp_path):
    with criterion(11, "stochastic CLI commands are byte-identical on rerun", 60) as info:
        cfg = tmp_path / "cfg.yaml"
        cfg.write_text("run:\n  n: 20000\n  trials: 12\n  ld_trials: 3000\n")
        checked = []
        for command, preset in (("simulate", "torus-golden"), ("simulate", "z12-mixed"),
                                ("ldtail", "z2-lazy")):
            outputs = []
            for i, threads in enumerate(("1", "1", "4")):
                out = tmp_path / f"{command}-{preset}-{i}"
                code = main([command, "--preset", preset, "--config", str(cfg), "--seed", "42",
                             "--threads", threads, "--out", str(out)])
                assert code == 0
                outputs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
            assert outputs[0] == outputs[1] == outputs[2]
            checked.append(f"{command}/{preset}")
        info["detail"] = ", ".join(checked) + " (threads 1, 1, 4)"

"""Nonstationary random walks: schedules, observables, Birkhoff averages.

A walk starts at x0 and at time k adds an independent draw from mu_k, where
mu_k is picked from a finite family by a schedule rule.  Trials are
vectorised over time (and over trials for the large-deviation estimate);
every trial or trial block owns a counter-based stream, so results do not
depend on the number of worker threads.
"""
from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy.stats import binomtest

from . import rng as rngmod
from .groups import FiniteAbelian, Group, GroupMismatch, Torus
from .measures import (
    DEFAULT_ATOM_CAP,
    AtomicMeasure,
    SamplerMeasure,
    atomic_sampler,
    convolve,
)

EXPLICIT = "explicit"
CYCLIC = "cyclic"
SEEDED_CHOICE = "seeded_choice"

_CHOICE_BLOCK = 4096
# encoded step draws held in memory at once (trials x steps)
_CHUNK_ELEMS = 1 << 20


class TailBelowResolution(RuntimeError):
    """Every estimated tail probability is zero."""


@dataclass(frozen=True, eq=False)
class WalkSchedule:
    """Which family member drives step n (n = 1, 2, ...).

    ``explicit``: ``indices[n-1]``, holding the last index once the list runs
    out.  ``cyclic``: ``indices[(n-1) % len(indices)]``.  ``seeded_choice``:
    uniform i.i.d. choice from the family, keyed by ``seed`` and random-access
    in n.
    """

    family: tuple
    rule: str = CYCLIC
    indices: tuple = (0,)
    seed: int | None = None

    def __post_init__(self):
        fam = tuple(self.family)
        if not fam:
            raise ValueError("schedule family is empty")
        g = fam[0].group
        for m in fam:
            if m.group != g:
                raise GroupMismatch("schedule family members live on different groups")
            if isinstance(m, AtomicMeasure) and not m.is_probability():
                raise ValueError("schedule family members must be probability measures")
        object.__setattr__(self, "family", fam)
        object.__setattr__(self, "indices", tuple(int(i) for i in self.indices))
        if self.rule in (EXPLICIT, CYCLIC):
            if not self.indices:
                raise ValueError(f"{self.rule} schedule needs a nonempty index list")
            bad = [i for i in self.indices if not 0 <= i < len(fam)]
            if bad:
                raise ValueError(f"schedule indices {bad[:5]} outside family of size {len(fam)}")
        elif self.rule == SEEDED_CHOICE:
            if self.seed is None:
                raise ValueError("seeded_choice schedule needs a seed")
        else:
            raise ValueError(f"unknown schedule rule {self.rule!r}")
        samplers = tuple(atomic_sampler(m) if isinstance(m, AtomicMeasure) else m for m in fam)
        object.__setattr__(self, "_samplers", samplers)

    @property
    def group(self) -> Group:
        return self.family[0].group

    @classmethod
    def constant(cls, mu) -> "WalkSchedule":
        return cls((mu,), CYCLIC, (0,))

    def _choice_block(self, b: int) -> np.ndarray:
        return _choice_block(int(self.seed), len(self.family), b)

    def index_range(self, start: int, stop: int) -> np.ndarray:
        """Family indices for steps start, ..., stop - 1 (1-based)."""
        if start < 1:
            raise ValueError("steps are numbered from 1")
        n = np.arange(start, stop)
        if self.rule == CYCLIC:
            return np.asarray(self.indices)[(n - 1) % len(self.indices)]
        if self.rule == EXPLICIT:
            return np.asarray(self.indices)[np.minimum(n - 1, len(self.indices) - 1)]
        if stop <= start:
            return np.zeros(0, dtype=np.int64)
        b0, b1 = (start - 1) // _CHOICE_BLOCK, (stop - 2) // _CHOICE_BLOCK
        blocks = np.concatenate([self._choice_block(b) for b in range(b0, b1 + 1)])
        off = b0 * _CHOICE_BLOCK
        return blocks[start - 1 - off: stop - 1 - off]

    def index(self, n: int) -> int:
        return int(self.index_range(n, n + 1)[0])

    def measure(self, n: int):
        return self.family[self.index(n)]

    def __call__(self, n: int):
        return self.measure(n)

    def measures(self, n: int) -> list:
        """[mu_1, ..., mu_n]."""
        return [self.family[i] for i in self.index_range(1, n + 1)]

    def draw_steps(self, rng: np.random.Generator, start: int, stop: int, trials: int) -> np.ndarray:
        """Encoded step draws, shape (trials, stop - start, coords)."""
        idx = self.index_range(start, stop)
        g = self.group
        width = len(g.array_moduli)
        dtype = float if isinstance(g, Torus) else np.int64
        out = np.empty((trials, len(idx), width), dtype=dtype)
        for k in np.unique(idx):
            cols = np.flatnonzero(idx == k)
            draws = self._samplers[k].sample(rng, trials * len(cols))
            out[:, cols, :] = draws.reshape(trials, len(cols), width)
        return out


@lru_cache(maxsize=256)
def _choice_block(seed: int, k: int, b: int) -> np.ndarray:
    r = rngmod.stream(seed, rngmod.SCHEDULE, b)
    out = r.integers(0, k, size=_CHOICE_BLOCK)
    out.setflags(write=False)
    return out


def _unit_coords(g: Group, enc: np.ndarray) -> np.ndarray:
    return enc / g.array_moduli if g.finite else enc


@dataclass(frozen=True, eq=False)
class Observable:
    """A continuous test function on the group.

    ``character``: cos(2 pi sum_i k_i u_i), u the coordinates scaled to [0, 1).
    ``table``: one value per group element in canonical order (finite groups).
    ``lipschitz_box``: max(0, 1 - L d(x, box)) for the box prod_i [lo_i, hi_i]
    (arcs, read modulo 1) on a torus or a finite product of cyclic groups.
    """

    kind: str
    group: Group
    frequency: tuple = ()
    table: tuple = ()
    lo: tuple = ()
    hi: tuple = ()
    lipschitz: float = 1.0

    def __post_init__(self):
        g = self.group
        width = len(g.array_moduli)
        if self.kind == "character":
            if len(self.frequency) != width:
                raise ValueError(f"character needs {width} frequencies")
            if isinstance(g, Torus) and any(int(k) != k for k in self.frequency):
                raise ValueError("torus character frequencies must be integers")
        elif self.kind == "table":
            if not g.finite:
                raise GroupMismatch("table observables need a finite group")
            if len(self.table) != g.order:
                raise ValueError(f"table has {len(self.table)} entries, group has {g.order} elements")
        elif self.kind == "lipschitz_box":
            if not isinstance(g, (Torus, FiniteAbelian)):
                raise GroupMismatch("lipschitz_box observables need a torus or FiniteAbelian group")
            if len(self.lo) != width or len(self.hi) != width:
                raise ValueError(f"box needs {width} lower and upper ends")
            if self.lipschitz <= 0:
                raise ValueError("Lipschitz constant must be positive")
        else:
            raise ValueError(f"unknown observable kind {self.kind!r}")

    @property
    def is_trivial_character(self) -> bool:
        if self.kind != "character":
            return False
        if isinstance(self.group, Torus):
            return all(k == 0 for k in self.frequency)
        return all(k % m == 0 for k, m in zip(self.frequency, self.group.array_moduli))

    def sup_norm(self) -> float:
        if self.kind == "table":
            return float(np.max(np.abs(self.table)))
        return 1.0

    def evaluate(self, enc: np.ndarray) -> np.ndarray:
        """Values on encoded elements of shape (..., coords)."""
        g = self.group
        if self.kind == "character":
            u = _unit_coords(g, enc)
            return np.cos(2 * np.pi * (u @ np.asarray(self.frequency, dtype=float)))
        if self.kind == "table":
            idx = g.index_of_array(enc.reshape(-1, enc.shape[-1])).reshape(enc.shape[:-1])
            return np.asarray(self.table, dtype=float)[idx]
        u = _unit_coords(g, enc)
        lo = np.asarray(self.lo) % 1.0
        width = (np.asarray(self.hi) - np.asarray(self.lo)) % 1.0
        t = (u - lo) % 1.0
        # distance on the circle from t to the arc [0, width]
        out_arc = np.minimum(np.abs(t - width), 1.0 - t)
        dist = np.where(t <= width, 0.0, out_arc).max(axis=-1)
        return np.maximum(0.0, 1.0 - self.lipschitz * dist)

    def __call__(self, x) -> float:
        return float(self.evaluate(self.group.encode([x]))[0])


def haar_integral_with_error(phi: Observable, quadrature_n: int = 2048) -> tuple[float, float]:
    """(integral of phi against Haar measure, absolute error bound)."""
    g = phi.group
    if phi.kind == "character":
        return (1.0 if phi.is_trivial_character else 0.0), 0.0
    if g.finite:
        return float(np.mean(phi.evaluate(g.encode(g.elements())))), 0.0
    # midpoint rule; |phi(x) - phi(center)| <= L * d(x, center) <= L / (2N)
    d = g.dimension
    n = max(2, int(round(quadrature_n ** (1.0 / d)))) if d > 1 else quadrature_n
    axes = [(np.arange(n) + 0.5) / n] * d
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    return float(np.mean(phi.evaluate(grid))), phi.lipschitz / (2.0 * n)


def haar_integral(phi: Observable) -> float:
    return haar_integral_with_error(phi)[0]


def integrate(phi: Observable, nu: AtomicMeasure) -> float:
    """Integral of phi against an atomic measure."""
    if nu.group != phi.group:
        raise GroupMismatch("observable and measure live on different groups")
    if not nu.points:
        return 0.0
    return float(phi.evaluate(nu.encoded()) @ nu.weight_array())


@dataclass(frozen=True)
class TrialReport:
    seed: int
    trial: int | None
    n: int
    birkhoff: float
    haar_integral: float
    deviation: float
    wall_time: float = field(default=0.0, compare=False)


def _check_pair(sched: WalkSchedule, phi: Observable):
    if sched.group != phi.group:
        raise GroupMismatch(f"observable lives on {phi.group}, schedule on {sched.group}")


def _birkhoff_block(x0_enc: np.ndarray, sched: WalkSchedule, phi: Observable, n: int,
                    gen: np.random.Generator, trials: int) -> np.ndarray:
    """Birkhoff averages (1/n) sum_{k<n} phi(x_k) for ``trials`` independent walks."""
    g = sched.group
    pos = np.repeat(x0_enc[None, :], trials, axis=0)
    acc = phi.evaluate(pos).astype(float)
    chunk = max(1, _CHUNK_ELEMS // trials)
    if isinstance(g, Torus):
        chunk = min(chunk, 8192)  # keeps cumulative float sums short
    step = 1
    while step < n:
        stop = min(n, step + chunk)
        draws = sched.draw_steps(gen, step, stop, trials)
        path = g.add_arrays(np.cumsum(draws, axis=1), pos[:, None, :])
        acc += phi.evaluate(path).sum(axis=1)
        pos = path[:, -1, :]
        step = stop
    return acc / n


def simulate_birkhoff(x0, sched: WalkSchedule, phi: Observable, n: int, seed: int,
                      trial: int | None = None) -> TrialReport:
    """One Birkhoff average along a simulated trajectory.

    The stream is ``(seed, TRIAL, trial)`` for indexed trials and
    ``(seed, SINGLE)`` otherwise.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    _check_pair(sched, phi)
    t0 = time.perf_counter()
    gen = rngmod.stream(seed, rngmod.SINGLE) if trial is None else rngmod.stream(seed, rngmod.TRIAL, trial)
    avg = float(_birkhoff_block(sched.group.encode([x0])[0], sched, phi, n, gen, 1)[0])
    h = haar_integral(phi)
    return TrialReport(seed, trial, n, avg, h, abs(avg - h), time.perf_counter() - t0)


def _pool_map(fn, items, threads: int):
    if threads <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def run_trials(x0, sched: WalkSchedule, phi: Observable, n: int, seed: int, trials: int,
               threads: int = 1) -> list[TrialReport]:
    """``trials`` independent Birkhoff averages, ordered by trial index."""
    return _pool_map(lambda i: simulate_birkhoff(x0, sched, phi, n, seed, trial=i),
                     range(trials), threads)


def simulate_endpoints(x0, sched: WalkSchedule, n: int, trials: int, seed: int) -> np.ndarray:
    """Encoded positions x_n = x0 + alpha_1 + ... + alpha_n for ``trials`` walks."""
    g = sched.group
    gen = rngmod.stream(seed, rngmod.SAMPLE)
    pos = np.repeat(g.encode([x0]), trials, axis=0)
    chunk = max(1, _CHUNK_ELEMS // trials)
    step = 1
    while step <= n:
        stop = min(n + 1, step + chunk)
        draws = sched.draw_steps(gen, step, stop, trials)
        pos = g.add_arrays(pos, draws.sum(axis=1))
        step = stop
    return pos


def distribution_pushforward(sched: WalkSchedule, nu0: AtomicMeasure, n: int,
                             atom_cap: int = DEFAULT_ATOM_CAP) -> list[AtomicMeasure]:
    """[nu_1, ..., nu_n] with nu_k = mu_k * nu_{k-1}."""
    if nu0.group != sched.group:
        raise GroupMismatch("starting measure and schedule live on different groups")
    out = []
    nu = nu0
    for k, mu in enumerate(sched.measures(n), start=1):
        if not isinstance(mu, AtomicMeasure):
            raise TypeError(f"step {k} is a sampler; exact pushforward needs atomic steps")
        nu = convolve(mu, nu, atom_cap)
        out.append(nu)
    return out


def birkhoff_mean_of_integrals(sched: WalkSchedule, nu0: AtomicMeasure, phi: Observable, n: int,
                               atom_cap: int = DEFAULT_ATOM_CAP) -> float:
    """(1/n) sum_{k<n} integral of phi d nu_k, from exact pushforwards."""
    if n < 1:
        raise ValueError("n must be >= 1")
    laws = [nu0] + distribution_pushforward(sched, nu0, n - 1, atom_cap)
    return math.fsum(integrate(phi, nu) for nu in laws) / n


@dataclass(frozen=True)
class TailRow:
    n: int
    hits: int
    trials: int
    p_hat: float
    ci_lo: float
    ci_hi: float


@dataclass(frozen=True)
class TailFit:
    """Weighted least-squares fit of log p_hat = intercept + slope * n."""

    slope: float
    slope_se: float
    intercept: float
    intercept_se: float
    points: int
    note: str = ""

    @property
    def rate(self) -> float:
        """delta-hat = -slope."""
        return -self.slope


@dataclass(frozen=True)
class TailEstimate:
    rows: tuple
    fit: TailFit
    epsilon: float
    seed: int


def wilson_interval(hits: int, trials: int) -> tuple[float, float]:
    ci = binomtest(hits, trials).proportion_ci(confidence_level=0.95, method="wilson")
    return float(ci.low), float(ci.high)


def fit_log_tail(rows: Sequence[TailRow]) -> TailFit:
    """Fit log p_hat against n over rows with p_hat > 0.

    Weights are inverse delta-method standard deviations of log p_hat,
    sd = sqrt((1 - p) / (trials * p)).  The slope standard error is the larger
    of the model-based one and the residual-scaled one, so lack of fit widens it.
    """
    used = [r for r in rows if r.hits > 0]
    if not used:
        raise TailBelowResolution("tail below resolution; increase trials or lower eps")
    note = "" if len(used) >= 3 else f"only {len(used)} grid point(s) with p_hat > 0"
    if len(used) == 1:
        r = used[0]
        return TailFit(math.nan, math.nan, math.log(r.p_hat), math.nan, 1, note)
    x = np.array([r.n for r in used], dtype=float)
    p = np.array([r.p_hat for r in used])
    t = np.array([r.trials for r in used], dtype=float)
    y = np.log(p)
    sd = np.sqrt(np.maximum(1.0 - p, 1.0 / t) / (t * p))
    w = 1.0 / sd
    coef, cov = np.polyfit(x, y, 1, w=w, cov="unscaled")
    se = np.sqrt(np.diag(cov))
    if len(used) >= 3:
        resid = (y - np.polyval(coef, x)) * w
        scale = math.sqrt(float(resid @ resid) / (len(used) - 2))
        se = se * max(1.0, scale)
    return TailFit(float(coef[0]), float(se[0]), float(coef[1]), float(se[1]), len(used), note)


def ld_tail_estimate(sched: WalkSchedule, phi: Observable, x0, eps: float, n_grid: Sequence[int],
                     trials: int, seed: int, threads: int = 1, block: int = 4096) -> TailEstimate:
    """Estimate P(|Birkhoff_n - integral of phi dh| > eps) over ``n_grid``.

    Trials run in blocks of ``block``; block b at grid position i uses the
    stream ``(seed, LD_BLOCK, i, b)``.
    """
    if trials < 100:
        raise ValueError("ld_tail_estimate needs at least 100 trials")
    grid = [int(n) for n in n_grid]
    if any(b <= a for a, b in zip(grid, grid[1:])) or grid[0] < 1:
        raise ValueError("n_grid must be positive and strictly increasing")
    _check_pair(sched, phi)
    h = haar_integral(phi)
    x0_enc = sched.group.encode([x0])[0]
    nblocks = math.ceil(trials / block)

    def work(job):
        i, b = job
        size = min(block, trials - b * block)
        gen = rngmod.stream(seed, rngmod.LD_BLOCK, i, b)
        avg = _birkhoff_block(x0_enc, sched, phi, grid[i], gen, size)
        return int(np.count_nonzero(np.abs(avg - h) > eps))

    jobs = [(i, b) for i in range(len(grid)) for b in range(nblocks)]
    counts = _pool_map(work, jobs, threads)
    rows = []
    for i, n in enumerate(grid):
        hits = sum(counts[i * nblocks:(i + 1) * nblocks])
        lo, hi = wilson_interval(hits, trials)
        rows.append(TailRow(n, hits, trials, hits / trials, lo, hi))
    try:
        fit = fit_log_tail(rows)
    except TailBelowResolution as exc:
        exc.rows = tuple(rows)
        raise
    return TailEstimate(tuple(rows), fit, eps, seed)

"""Concrete compact abelian groups.

Four families are supported: finite products of cyclic groups, flat tori with
the sup metric, truncated dyadic Cantor groups (Z/2)^k with the first-bit
ultrametric, and truncated p-adic integers Z/p^k with the valuation
ultrametric.

Elements are plain tuples in canonical reduced form.  Every group also has a
vectorised encoding (``encode``/``decode``) into coordinate arrays that add
componentwise modulo ``array_moduli``; the bulk numerics (convolution, transport
cost matrices, walk simulation) run on that encoding.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

# slack used for every closed-ball membership test ``d <= r``
METRIC_TOL = 1e-12


class GroupMismatch(ValueError):
    """An element or measure does not belong to the group it is used with."""


def _is_prime(p: int) -> bool:
    if p < 2:
        return False
    return all(p % q for q in range(2, math.isqrt(p) + 1))


class Group:
    """Base class; concrete groups below."""

    finite = True

    # -- group law ---------------------------------------------------------
    def zero(self):
        raise NotImplementedError

    def add(self, x, y):
        self.check(x)
        self.check(y)
        return self._add(x, y)

    def neg(self, x):
        self.check(x)
        return self._neg(x)

    def sub(self, x, y):
        return self.add(x, self.neg(y))

    def metric(self, x, y) -> float:
        self.check(x)
        self.check(y)
        a = self.encode([x])
        b = self.encode([y])
        return float(self.metric_array(a, b)[0])

    # -- vectorised encoding ----------------------------------------------
    @property
    def array_moduli(self) -> np.ndarray:
        raise NotImplementedError

    def encode(self, elements) -> np.ndarray:
        raise NotImplementedError

    def decode(self, arr: np.ndarray) -> list:
        raise NotImplementedError

    def add_arrays(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return np.mod(a + b, self.array_moduli)

    def metric_array(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Pairwise metric between broadcast-compatible encoded arrays."""
        raise NotImplementedError

    # -- Haar structure ----------------------------------------------------
    def haar_sample(self, rng: np.random.Generator):
        return self.decode(self.haar_sample_array(rng, 1))[0]

    def haar_sample_array(self, rng: np.random.Generator, size: int) -> np.ndarray:
        m = self.array_moduli
        return rng.integers(0, m, size=(size, len(m)))

    def haar_ball_mass(self, r: float) -> float:
        raise NotImplementedError

    def diameter(self) -> float:
        raise NotImplementedError

    # -- finite-group helpers ---------------------------------------------
    @cached_property
    def order(self) -> int:
        return int(np.prod(self.array_moduli))

    def elements(self) -> list:
        """All elements in canonical index order (finite groups only)."""
        return list(self._elements)

    @cached_property
    def _elements(self) -> tuple:
        self._require_finite()
        return tuple(self.decode(self.index_to_array(np.arange(self.order))))

    def index_of_array(self, arr: np.ndarray) -> np.ndarray:
        self._require_finite()
        return np.ravel_multi_index(tuple(np.asarray(arr, dtype=np.int64).T),
                                    tuple(int(m) for m in self.array_moduli))

    def index_to_array(self, idx) -> np.ndarray:
        self._require_finite()
        coords = np.unravel_index(np.asarray(idx, dtype=np.int64),
                                  tuple(int(m) for m in self.array_moduli))
        return np.stack(coords, axis=-1).astype(np.int64)

    def index(self, x) -> int:
        self.check(x)
        return int(self.index_of_array(self.encode([x]))[0])

    def element(self, i: int):
        return self.decode(self.index_to_array([i]))[0]

    @cached_property
    def addition_table(self) -> np.ndarray:
        """``table[i, j]`` is the index of ``element(i) + element(j)``."""
        arr = self.index_to_array(np.arange(self.order))
        s = self.add_arrays(arr[:, None, :], arr[None, :, :])
        return self.index_of_array(s.reshape(-1, arr.shape[1])).reshape(self.order, self.order)

    @cached_property
    def distance_matrix(self) -> np.ndarray:
        """``d(element(i), element(j))`` for all index pairs (finite groups only)."""
        arr = self.index_to_array(np.arange(self.order))
        return self.metric_array(arr[:, None, :], arr[None, :, :])

    @cached_property
    def distance_from_zero(self) -> np.ndarray:
        """``d(0, element(i))`` for every index ``i`` (finite groups only)."""
        arr = self.index_to_array(np.arange(self.order))
        return self.metric_array(np.zeros_like(arr[:1]), arr)

    def _require_finite(self):
        if not self.finite:
            raise GroupMismatch(f"{self} is not a finite group")

    def check(self, x):
        raise NotImplementedError

    def __contains__(self, x) -> bool:
        try:
            self.check(x)
        except GroupMismatch:
            return False
        return True


def _check_int_tuple(g, x, moduli):
    if not isinstance(x, tuple) or len(x) != len(moduli):
        raise GroupMismatch(f"{x!r} is not an element of {g}")
    for c, m in zip(x, moduli):
        if not isinstance(c, (int, np.integer)) or isinstance(c, bool) or not 0 <= c < m:
            raise GroupMismatch(f"{x!r} is not an element of {g}")


@dataclass(frozen=True, eq=True)
class FiniteAbelian(Group):
    """Product of cyclic groups Z/m_1 x ... x Z/m_r.

    The metric is the sup over coordinates of the cyclic distance divided by the
    modulus, so Z/m sits isometrically inside the circle.
    """

    moduli: tuple[int, ...]

    def __post_init__(self):
        mods = tuple(int(m) for m in self.moduli)
        if not mods or any(m < 2 for m in mods):
            raise ValueError("moduli must be a nonempty list of integers >= 2")
        object.__setattr__(self, "moduli", mods)

    def zero(self):
        return (0,) * len(self.moduli)

    def check(self, x):
        _check_int_tuple(self, x, self.moduli)

    def _add(self, x, y):
        return tuple((a + b) % m for a, b, m in zip(x, y, self.moduli))

    def _neg(self, x):
        return tuple((-a) % m for a, m in zip(x, self.moduli))

    @cached_property
    def array_moduli(self):
        return np.array(self.moduli, dtype=np.int64)

    def encode(self, elements):
        return np.array([list(x) for x in elements], dtype=np.int64).reshape(-1, len(self.moduli))

    def decode(self, arr):
        return [tuple(int(c) for c in row) for row in np.asarray(arr)]

    def metric_array(self, a, b):
        m = self.array_moduli
        diff = np.abs(a - b) % m
        return np.max(np.minimum(diff, m - diff) / m, axis=-1)

    def haar_ball_mass(self, r):
        mass = 1.0
        for m in self.moduli:
            k = np.arange(m)
            mass *= np.count_nonzero(np.minimum(k, m - k) / m <= r + METRIC_TOL) / m
        return float(mass)

    def diameter(self):
        return max((m // 2) / m for m in self.moduli)

    def __str__(self):
        return "FiniteAbelian(" + "x".join(f"Z/{m}" for m in self.moduli) + ")"


@dataclass(frozen=True, eq=True)
class Torus(Group):
    """Flat torus R^d/Z^d with the sup of circle distances."""

    dimension: int
    finite = False

    def __post_init__(self):
        if int(self.dimension) < 1:
            raise ValueError("torus dimension must be >= 1")
        object.__setattr__(self, "dimension", int(self.dimension))

    def zero(self):
        return (0.0,) * self.dimension

    @staticmethod
    def reduce(c: float) -> float:
        r = float(c) % 1.0
        # float modulo can land on 1.0 for tiny negative inputs
        return 0.0 if r >= 1.0 else r

    def element(self, coords):
        coords = tuple(coords) if not np.isscalar(coords) else (coords,)
        if len(coords) != self.dimension:
            raise GroupMismatch(f"{coords!r} has wrong dimension for {self}")
        return tuple(self.reduce(c) for c in coords)

    def check(self, x):
        if not isinstance(x, tuple) or len(x) != self.dimension:
            raise GroupMismatch(f"{x!r} is not an element of {self}")
        for c in x:
            if not isinstance(c, (float, np.floating)) or not 0.0 <= c < 1.0:
                raise GroupMismatch(f"{x!r} is not an element of {self}")

    def _add(self, x, y):
        return tuple(self.reduce(a + b) for a, b in zip(x, y))

    def _neg(self, x):
        return tuple(self.reduce(-a) for a in x)

    @cached_property
    def array_moduli(self):
        return np.ones(self.dimension)

    def add_arrays(self, a, b):
        s = np.mod(a + b, 1.0)
        s[s >= 1.0] = 0.0
        return s

    def encode(self, elements):
        return np.array([list(x) for x in elements], dtype=float).reshape(-1, self.dimension)

    def decode(self, arr):
        return [tuple(float(c) for c in row) for row in np.asarray(arr)]

    def metric_array(self, a, b):
        diff = np.abs(a - b) % 1.0
        return np.max(np.minimum(diff, 1.0 - diff), axis=-1)

    def haar_sample_array(self, rng, size):
        return rng.random((size, self.dimension))

    def haar_ball_mass(self, r):
        return float(min(2.0 * max(r, 0.0), 1.0) ** self.dimension)

    def diameter(self):
        return 0.5

    @property
    def order(self):
        raise GroupMismatch(f"{self} is not a finite group")

    def __str__(self):
        return f"Torus({self.dimension})"


def _ultrametric_cylinder(base: int, depth: int, r: float) -> int:
    """Number of leading digits two points must share to be within ``r``.

    Distances take the values base**-j (j = 1..depth) and 0.
    """
    for j in range(1, depth + 1):
        if base ** -j <= r + METRIC_TOL:
            return j - 1
    return depth


@dataclass(frozen=True, eq=True)
class DyadicCantor(Group):
    """Truncated dyadic Cantor group (Z/2)^depth.

    Elements are bit tuples (b_1, ..., b_k); d(x, y) = 2**-j with j the first
    (1-based) index where the bits differ.
    """

    depth: int

    def __post_init__(self):
        if int(self.depth) < 1:
            raise ValueError("depth must be >= 1")
        object.__setattr__(self, "depth", int(self.depth))

    def zero(self):
        return (0,) * self.depth

    def check(self, x):
        _check_int_tuple(self, x, (2,) * self.depth)

    def _add(self, x, y):
        return tuple(a ^ b for a, b in zip(x, y))

    def _neg(self, x):
        return x

    @cached_property
    def array_moduli(self):
        return np.full(self.depth, 2, dtype=np.int64)

    def encode(self, elements):
        return np.array([list(x) for x in elements], dtype=np.int64).reshape(-1, self.depth)

    def decode(self, arr):
        return [tuple(int(c) for c in row) for row in np.asarray(arr)]

    def metric_array(self, a, b):
        differ = np.broadcast_to(a != b, np.broadcast_shapes(a.shape, b.shape))
        first = np.argmax(differ, axis=-1)
        any_diff = differ.any(axis=-1)
        return np.where(any_diff, 2.0 ** -(first + 1.0), 0.0)

    def haar_ball_mass(self, r):
        return 2.0 ** -_ultrametric_cylinder(2, self.depth, r)

    def diameter(self):
        return 0.5

    def __str__(self):
        return f"DyadicCantor({self.depth})"


@dataclass(frozen=True, eq=True)
class PAdicInt(Group):
    """Truncated p-adic integers Z/p^depth.

    Elements are little-endian digit tuples (d_0, ..., d_{k-1}), value
    sum d_i p^i.  d(x, y) = p**-(v + 1) where v is the valuation of x - y, so
    the diameter is 1/p like the dyadic Cantor group at p = 2.
    """

    prime: int
    depth: int

    def __post_init__(self):
        if not _is_prime(int(self.prime)):
            raise ValueError(f"{self.prime} is not prime")
        if int(self.depth) < 1:
            raise ValueError("depth must be >= 1")
        object.__setattr__(self, "prime", int(self.prime))
        object.__setattr__(self, "depth", int(self.depth))

    @cached_property
    def modulus(self) -> int:
        return self.prime ** self.depth

    def zero(self):
        return (0,) * self.depth

    def check(self, x):
        _check_int_tuple(self, x, (self.prime,) * self.depth)

    def value(self, x) -> int:
        return sum(d * self.prime ** i for i, d in enumerate(x))

    def from_value(self, v: int):
        v %= self.modulus
        digits = []
        for _ in range(self.depth):
            v, d = divmod(v, self.prime)
            digits.append(d)
        return tuple(digits)

    def _add(self, x, y):
        return self.from_value(self.value(x) + self.value(y))

    def _neg(self, x):
        return self.from_value(-self.value(x))

    def valuation(self, v: int) -> int:
        v %= self.modulus
        if v == 0:
            return self.depth
        k = 0
        while v % self.prime == 0:
            v //= self.prime
            k += 1
        return k

    @cached_property
    def array_moduli(self):
        return np.array([self.modulus], dtype=np.int64)

    def encode(self, elements):
        return np.array([[self.value(x)] for x in elements], dtype=np.int64).reshape(-1, 1)

    def decode(self, arr):
        return [self.from_value(int(row[0])) for row in np.asarray(arr)]

    def metric_array(self, a, b):
        diff = np.mod(a[..., 0] - b[..., 0], self.modulus)
        v = np.zeros(diff.shape, dtype=np.int64)
        rest = diff.copy()
        for _ in range(self.depth):
            step = (rest % self.prime == 0) & (rest != 0)
            v += step
            rest = np.where(step, rest // self.prime, rest)
        return np.where(diff == 0, 0.0, float(self.prime) ** -(v + 1.0))

    def haar_ball_mass(self, r):
        return float(self.prime) ** -_ultrametric_cylinder(self.prime, self.depth, r)

    def diameter(self):
        return 1.0 / self.prime

    def __str__(self):
        return f"PAdicInt(p={self.prime}, depth={self.depth})"


def group_from_config(spec: dict) -> Group:
    """Build a group from the config form, e.g. ``{"torus": 1}`` or ``{"finite": [2, 3]}``."""
    if not isinstance(spec, dict) or len(spec) != 1:
        raise ValueError(f"group spec must have exactly one key, got {spec!r}")
    (kind, arg), = spec.items()
    if kind == "finite":
        return FiniteAbelian(tuple(arg) if isinstance(arg, (list, tuple)) else (arg,))
    if kind == "torus":
        return Torus(arg)
    if kind == "cantor":
        return DyadicCantor(arg)
    if kind == "padic":
        return PAdicInt(arg["p"], arg["depth"])
    raise ValueError(f"unknown group kind {kind!r}")


def group_to_config(g: Group) -> dict:
    if isinstance(g, FiniteAbelian):
        return {"finite": list(g.moduli)}
    if isinstance(g, Torus):
        return {"torus": g.dimension}
    if isinstance(g, DyadicCantor):
        return {"cantor": g.depth}
    if isinstance(g, PAdicInt):
        return {"padic": {"p": g.prime, "depth": g.depth}}
    raise TypeError(g)


def all_pairs(g: Group):
    """Every ordered pair of elements of a finite group."""
    els = g.elements()
    return itertools.product(els, els)

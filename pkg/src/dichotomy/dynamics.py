"""Compact base dynamics (Omega, T) over which the operator families live.

Torus points are tuples of floats in [0, 1); periodic-cycle points are ints.
All maps have closed-form iterates, so ``advance`` never accumulates error
from repeated stepping.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0

BasePoint = Union[tuple, int]

KINDS = ("rotation", "translation", "skew-shift", "cycle")


class MalformedPointError(ValueError):
    pass


def reduce_mod1(x):
    """Floor-based reduction into [0, 1), scalar or array.

    ``x - floor(x)`` can round up to exactly 1.0 for tiny negative inputs;
    those are mapped back to 0.0.
    """
    x = np.asarray(x, dtype=float)
    r = x - np.floor(x)
    r = np.where(r >= 1.0, 0.0, r)
    return r


@dataclass(frozen=True)
class BaseSystem:
    kind: str
    alpha: tuple = ()
    period: int = 0
    minimal: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown base kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "cycle":
            if self.period < 1:
                raise ValueError("periodic cycle needs period >= 1")
        elif self.kind == "translation":
            if len(self.alpha) < 1:
                raise ValueError("translation needs at least one frequency")
        elif len(self.alpha) != 1:
            raise ValueError(f"{self.kind} takes a single frequency alpha")

    @property
    def dim(self) -> int:
        """Number of torus coordinates (0 for a periodic cycle)."""
        if self.kind == "cycle":
            return 0
        if self.kind == "skew-shift":
            return 2
        return len(self.alpha)

    @property
    def is_cycle(self) -> bool:
        return self.kind == "cycle"

    def point(self, p) -> BasePoint:
        """Normalize user input into a valid BasePoint."""
        if self.is_cycle:
            if isinstance(p, (tuple, list, np.ndarray)):
                raise MalformedPointError(f"cycle state must be an integer, got {p!r}")
            i = int(p)
            if i != p or not 0 <= i < self.period:
                raise MalformedPointError(f"cycle state {p!r} outside 0..{self.period - 1}")
            return i
        coords = np.atleast_1d(np.asarray(p, dtype=float))
        if coords.shape != (self.dim,):
            raise MalformedPointError(f"expected {self.dim} torus coordinates, got {p!r}")
        if not np.all(np.isfinite(coords)):
            raise MalformedPointError(f"non-finite torus point {p!r}")
        return tuple(float(c) for c in reduce_mod1(coords))

    def orbit(self, p, offsets) -> np.ndarray:
        """T^k(p) for every k in ``offsets``.

        Returns shape (len(offsets), dim) floats for torus systems and
        (len(offsets),) ints for a periodic cycle.
        """
        p = self.point(p)
        k = np.asarray(offsets, dtype=np.int64)
        if self.is_cycle:
            return np.mod(p + k, self.period)
        x = np.asarray(p, dtype=float)
        a = np.asarray(self.alpha, dtype=float)
        kf = k.astype(float)
        if self.kind == "skew-shift":
            # T^n(x, y) = (x + n a, y + n x + n(n-1)/2 a), valid for negative n too
            x1 = x[0] + kf * a[0]
            x2 = x[1] + kf * x[0] + 0.5 * kf * (kf - 1.0) * a[0]
            return reduce_mod1(np.stack([x1, x2], axis=-1))
        return reduce_mod1(x[None, :] + kf[:, None] * a[None, :])

    def advance(self, p, n: int) -> BasePoint:
        """T^n(p) for a signed integer n."""
        if self.is_cycle:
            return int(self.orbit(p, [n])[0])
        return tuple(float(c) for c in self.orbit(p, [n])[0])

    def distance(self, p, q) -> float:
        """Max-coordinate distance on the torus, or 0/1 discrete metric on a cycle."""
        p, q = self.point(p), self.point(q)
        if self.is_cycle:
            return 0.0 if p == q else 1.0
        d = np.abs(np.asarray(p) - np.asarray(q))
        return float(np.max(np.minimum(d, 1.0 - d)))

    def as_array(self, points: Sequence) -> np.ndarray:
        if self.is_cycle:
            return np.asarray([self.point(p) for p in points], dtype=np.int64)
        return np.asarray([self.point(p) for p in points], dtype=float).reshape(len(points), self.dim)


def rotation(alpha: float = GOLDEN, minimal: bool = True) -> BaseSystem:
    return BaseSystem("rotation", (float(alpha),), minimal=minimal)


def translation(alpha: Sequence[float], minimal: bool = True) -> BaseSystem:
    return BaseSystem("translation", tuple(float(a) for a in alpha), minimal=minimal)


def skew_shift(alpha: float = GOLDEN, minimal: bool = True) -> BaseSystem:
    return BaseSystem("skew-shift", (float(alpha),), minimal=minimal)


def cycle(period: int) -> BaseSystem:
    return BaseSystem("cycle", (), period=int(period), minimal=True)


def advance(system: BaseSystem, p, n: int) -> BasePoint:
    return system.advance(p, n)


def sample_base(system: BaseSystem, resolution: int) -> list:
    """Deterministic grid covering Omega with mesh 1/resolution per coordinate."""
    if resolution < 1:
        raise ValueError("resolution must be >= 1")
    if system.is_cycle:
        return list(range(system.period))
    ticks = [k / resolution for k in range(resolution)]
    return [tuple(c) for c in itertools.product(ticks, repeat=system.dim)]

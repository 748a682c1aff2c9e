"""Compact uncertainty sets: boxes, Euclidean balls and their products.

Every set exposes a smooth inequality encoding ``c(xi) <= 0`` that holds
exactly on the set.  All methods broadcast over leading axes of ``xi`` so a
batch of points of shape ``(..., dim)`` can be checked in one call.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError


def _check_dim(xi: np.ndarray, dim: int) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    if xi.shape[-1:] != (dim,):
        raise InvalidInputError(f"expected trailing dimension {dim}, got shape {xi.shape}")
    return xi


class BoundedSet:
    """Common interface of the concrete set kinds."""

    dim: int

    def constraints(self, xi) -> np.ndarray:
        """Smooth encoding values; membership iff ``max <= 0``."""
        raise NotImplementedError

    def smooth_constraints(self, xi) -> np.ndarray:
        """Encoding values not already captured by :meth:`bounds`."""
        raise NotImplementedError

    @property
    def n_smooth(self) -> int:
        raise NotImplementedError

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Coordinate-wise enclosing box."""
        raise NotImplementedError

    def center(self) -> np.ndarray:
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        raise NotImplementedError

    def contains(self, xi, tol: float = 0.0):
        """Membership with an absolute slack ``tol`` on the encoding."""
        c = self.constraints(xi)
        if c.shape[-1] == 0:
            return np.ones(c.shape[:-1], dtype=bool) if c.ndim > 1 else True
        return np.max(c, axis=-1) <= tol

    def is_singleton(self) -> bool:
        lo, hi = self.bounds()
        return bool(np.all(lo == hi))


@dataclass(frozen=True, eq=False)
class Box(BoundedSet):
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=float)).copy()
        hi = np.atleast_1d(np.asarray(self.hi, dtype=float)).copy()
        if lo.shape != hi.shape or lo.ndim != 1:
            raise InvalidInputError("box bounds must be 1-D arrays of equal length")
        if np.any(lo > hi) or np.any(np.isnan(lo)) or np.any(np.isnan(hi)):
            raise InvalidInputError("box requires lo <= hi elementwise")
        lo.flags.writeable = False
        hi.flags.writeable = False
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self) -> int:
        return self.lo.size

    def constraints(self, xi):
        xi = _check_dim(xi, self.dim)
        return np.concatenate([self.lo - xi, xi - self.hi], axis=-1)

    def smooth_constraints(self, xi):
        xi = np.asarray(xi, dtype=float)
        return np.zeros(xi.shape[:-1] + (0,))

    @property
    def n_smooth(self) -> int:
        return 0

    def bounds(self):
        return self.lo.copy(), self.hi.copy()

    def center(self):
        # half-infinite or infinite coordinates fall back to 0 clipped into range
        finite = np.isfinite(self.lo) & np.isfinite(self.hi)
        mid = 0.5 * (np.where(finite, self.lo, 0.0) + np.where(finite, self.hi, 0.0))
        return np.where(finite, mid, np.clip(0.0, self.lo, self.hi))

    def sample(self, rng, size=None):
        if not (np.all(np.isfinite(self.lo)) and np.all(np.isfinite(self.hi))):
            raise InvalidInputError("cannot sample an unbounded box")
        shape = (self.dim,) if size is None else (size, self.dim)
        return self.lo + (self.hi - self.lo) * rng.random(shape)

    def __eq__(self, other):
        return (isinstance(other, Box) and np.array_equal(self.lo, other.lo)
                and np.array_equal(self.hi, other.hi))

    def __repr__(self):
        return f"Box(lo={self.lo.tolist()}, hi={self.hi.tolist()})"


@dataclass(frozen=True, eq=False)
class Ball(BoundedSet):
    center_: np.ndarray
    radius: float

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.center_, dtype=float)).copy()
        r = float(self.radius)
        if c.ndim != 1:
            raise InvalidInputError("ball center must be 1-D")
        if not r >= 0.0:
            raise InvalidInputError("ball radius must be non-negative")
        c.flags.writeable = False
        object.__setattr__(self, "center_", c)
        object.__setattr__(self, "radius", r)

    @property
    def dim(self) -> int:
        return self.center_.size

    def constraints(self, xi):
        xi = _check_dim(xi, self.dim)
        d = xi - self.center_
        return (np.sum(d * d, axis=-1) - self.radius ** 2)[..., None]

    def smooth_constraints(self, xi):
        return self.constraints(xi)

    @property
    def n_smooth(self) -> int:
        return 1

    def bounds(self):
        return self.center_ - self.radius, self.center_ + self.radius

    def center(self):
        return self.center_.copy()

    def sample(self, rng, size=None):
        n = 1 if size is None else size
        direction = rng.standard_normal((n, self.dim))
        norm = np.linalg.norm(direction, axis=1, keepdims=True)
        norm[norm == 0.0] = 1.0
        radius = self.radius * rng.random((n, 1)) ** (1.0 / self.dim)
        out = self.center_ + radius * direction / norm
        return out[0] if size is None else out

    def __eq__(self, other):
        return (isinstance(other, Ball) and np.array_equal(self.center_, other.center_)
                and self.radius == other.radius)

    def __repr__(self):
        return f"Ball(center={self.center_.tolist()}, radius={self.radius})"


@dataclass(frozen=True, eq=False)
class Product(BoundedSet):
    parts: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "parts", tuple(self.parts))
        for p in self.parts:
            if not isinstance(p, BoundedSet):
                raise InvalidInputError("product components must be bounded sets")

    @property
    def dim(self) -> int:
        return sum(p.dim for p in self.parts)

    def _split(self, xi):
        xi = _check_dim(xi, self.dim)
        out, start = [], 0
        for p in self.parts:
            out.append(xi[..., start:start + p.dim])
            start += p.dim
        return xi, out

    def constraints(self, xi):
        xi, chunks = self._split(xi)
        if not self.parts:
            return np.zeros(xi.shape[:-1] + (0,))
        return np.concatenate([p.constraints(c) for p, c in zip(self.parts, chunks)], axis=-1)

    def smooth_constraints(self, xi):
        xi, chunks = self._split(xi)
        vals = [p.smooth_constraints(c) for p, c in zip(self.parts, chunks)]
        if not vals:
            return np.zeros(xi.shape[:-1] + (0,))
        return np.concatenate(vals, axis=-1)

    @property
    def n_smooth(self) -> int:
        return sum(p.n_smooth for p in self.parts)

    def bounds(self):
        if not self.parts:
            return np.zeros(0), np.zeros(0)
        b = [p.bounds() for p in self.parts]
        return np.concatenate([x[0] for x in b]), np.concatenate([x[1] for x in b])

    def center(self):
        if not self.parts:
            return np.zeros(0)
        return np.concatenate([p.center() for p in self.parts])

    def sample(self, rng, size=None):
        if not self.parts:
            return np.zeros((0,) if size is None else (size, 0))
        return np.concatenate([p.sample(rng, size) for p in self.parts], axis=-1)

    def __eq__(self, other):
        return isinstance(other, Product) and self.parts == other.parts

    def __repr__(self):
        return f"Product({list(self.parts)!r})"


def empty_set() -> Product:
    """The zero-dimensional set (for absent parameters or disturbances)."""
    return Product(())


def set_constraints(s: BoundedSet, xi) -> np.ndarray:
    return s.constraints(xi)


def set_sample(s: BoundedSet, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    return s.sample(rng, size)

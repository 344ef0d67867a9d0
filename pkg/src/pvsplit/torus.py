"""Geometry of the unit torus T^2 = [0,1)^2 and of vortex configurations."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput


def _wrap_array(a):
    a = np.asarray(a, dtype=float)
    w = a - np.floor(a)
    # x - floor(x) can round up to exactly 1.0 for tiny negative x
    return np.where(w >= 1.0, 0.0, w)


@dataclass(frozen=True)
class TorusPoint:
    u: float
    v: float

    def __post_init__(self):
        if not (0.0 <= self.u < 1.0 and 0.0 <= self.v < 1.0):
            raise InvalidInput(f"coordinates must lie in [0,1): {(self.u, self.v)}")

    def __array__(self, dtype=None, copy=None):
        return np.array([self.u, self.v], dtype=dtype)

    def __iter__(self):
        yield self.u
        yield self.v


def wrap(p) -> TorusPoint:
    """Canonical representative of a raw 2-vector on [0,1)^2."""
    a = np.asarray(p, dtype=float)
    if a.shape != (2,):
        raise InvalidInput(f"expected a 2-vector, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInput("non-finite coordinate")
    w = _wrap_array(a)
    return TorusPoint(float(w[0]), float(w[1]))


def min_image(d):
    """Reduce displacement components to [-1/2, 1/2); ties go to +1/2 (see min_displacement)."""
    d = np.asarray(d, dtype=float)
    r = d - np.floor(d + 0.5)
    return np.where(r == -0.5, 0.5, r)


def min_displacement(a, b) -> np.ndarray:
    """Shortest lift r of a - b, so that wrap(b + r) == a and |r_i| <= 1/2.

    An exact half-period tie returns +1/2 for that component.
    """
    return min_image(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))


def point_distance(a, b) -> float:
    return float(np.hypot(*min_displacement(a, b)))


@dataclass(frozen=True, eq=False)
class Configuration:
    """Vortex positions (N, 2) on the torus plus nonzero intensities (N,)."""

    pos: np.ndarray
    xi: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.pos, dtype=float)
        xi = np.asarray(self.xi, dtype=float)
        if pos.ndim != 2 or pos.shape[1] != 2:
            raise InvalidInput(f"positions must have shape (N, 2), got {pos.shape}")
        if xi.shape != (pos.shape[0],):
            raise InvalidInput("one intensity per vortex required")
        if pos.shape[0] < 2:
            raise InvalidInput("at least two vortices required")
        if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(xi))):
            raise InvalidInput("non-finite positions or intensities")
        if np.any(xi == 0.0):
            raise InvalidInput("intensities must be nonzero")
        pos = _wrap_array(pos)
        pos.flags.writeable = False
        xi = xi.copy()
        xi.flags.writeable = False
        object.__setattr__(self, "pos", pos)
        object.__setattr__(self, "xi", xi)

    @property
    def n(self) -> int:
        return self.pos.shape[0]

    def points(self) -> list[TorusPoint]:
        return [TorusPoint(float(u), float(v)) for u, v in self.pos]

    def with_positions(self, pos) -> "Configuration":
        return Configuration(pos, self.xi)

    def with_intensities(self, xi) -> "Configuration":
        return Configuration(self.pos, xi)

    def is_admissible(self) -> bool:
        """True when all positions are pairwise distinct (membership in X)."""
        d = min_image(self.pos[:, None, :] - self.pos[None, :, :])
        same = np.all(d == 0.0, axis=-1)
        np.fill_diagonal(same, False)
        return not bool(same.any())

    def __eq__(self, other):
        if not isinstance(other, Configuration):
            return NotImplemented
        return np.array_equal(self.pos, other.pos) and np.array_equal(self.xi, other.xi)

    __hash__ = None

    def to_dict(self) -> dict:
        return {"xi": [float(x) for x in self.xi], "pos": [[float(u), float(v)] for u, v in self.pos]}

    def to_json(self) -> str:
        # repr of a Python float is the shortest string that round-trips exactly
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d) -> "Configuration":
        try:
            return cls(d["pos"], d["xi"])
        except (KeyError, TypeError) as exc:
            raise InvalidInput(f"malformed configuration document: {exc}") from exc

    @classmethod
    def from_json(cls, s: str) -> "Configuration":
        return cls.from_dict(json.loads(s))


def config_distance(x: Configuration, y: Configuration) -> float:
    """Product torus metric d_T: per-coordinate shortest wrap-around differences, l2-combined."""
    if x.n != y.n:
        raise InvalidInput(f"configurations differ in size: {x.n} vs {y.n}")
    if not np.array_equal(x.xi, y.xi):
        raise InvalidInput("configurations carry different intensities")
    return distance_positions(x.pos, y.pos)


def distance_positions(a, b) -> float:
    """d_T on raw position arrays of equal shape."""
    d = np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))
    d = d - np.floor(d)
    d = np.minimum(d, 1.0 - d)
    return float(np.sqrt(np.sum(d * d)))


def uniform_configuration(xi, rng: np.random.Generator, min_distance: float = 0.0,
                          max_tries: int = 100_000) -> Configuration:
    """Uniform positions for the given intensities, optionally rejecting close pairs."""
    xi = np.asarray(xi, dtype=float)
    for _ in range(max_tries):
        pos = rng.random((xi.size, 2))
        if min_distance <= 0.0:
            return Configuration(pos, xi)
        d = min_image(pos[:, None, :] - pos[None, :, :])
        r = np.hypot(d[..., 0], d[..., 1])
        np.fill_diagonal(r, np.inf)
        if r.min() >= min_distance:
            return Configuration(pos, xi)
    raise InvalidInput(f"could not place {xi.size} vortices {min_distance} apart")

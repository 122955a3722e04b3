"""Bounded domains and uniform cell-centred grids.

Three shapes are supported: an interval in 1D, and a disk or an axis-aligned
square in 2D. A grid keeps every cell of a uniform lattice whose centre lies
strictly inside the domain, so nodes carry integer lattice indices and all
kernel weights between nodes depend only on index offsets.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

__all__ = [
    "Domain",
    "Grid",
    "Field",
    "make_grid",
    "boundary_distance",
]

_SHAPES = ("interval", "disk", "square")


@dataclass(frozen=True)
class Domain:
    """A bounded domain in dimension 1 or 2.

    Use the ``interval``, ``disk`` and ``square`` constructors rather than the
    raw initializer.
    """

    shape: str
    params: tuple

    def __post_init__(self):
        if self.shape not in _SHAPES:
            raise ValueError(f"unknown shape {self.shape!r}; expected one of {_SHAPES}")
        if self.shape == "interval":
            a, b = self.params
            if not a < b:
                raise ValueError(f"interval requires a < b, got ({a}, {b})")
        elif self.shape == "disk":
            center, radius = self.params
            if len(center) != 2:
                raise ValueError("disk center must be a 2-vector")
            if not radius > 0:
                raise ValueError(f"disk radius must be positive, got {radius}")
        else:
            corner, side = self.params
            if len(corner) != 2:
                raise ValueError("square corner must be a 2-vector")
            if not side > 0:
                raise ValueError(f"square side must be positive, got {side}")

    @classmethod
    def interval(cls, a: float, b: float) -> "Domain":
        return cls("interval", (float(a), float(b)))

    @classmethod
    def disk(cls, center=(0.0, 0.0), radius: float = 1.0) -> "Domain":
        return cls("disk", (tuple(float(c) for c in center), float(radius)))

    @classmethod
    def square(cls, corner=(0.0, 0.0), side: float = 1.0) -> "Domain":
        return cls("square", (tuple(float(c) for c in corner), float(side)))

    @classmethod
    def from_config(cls, cfg: dict[str, Any]) -> "Domain":
        """Build a domain from ``{"shape": ..., parameters...}``."""
        cfg = dict(cfg)
        shape = cfg.pop("shape", None)
        allowed = {
            "interval": {"a", "b"},
            "disk": {"center", "radius"},
            "square": {"corner", "side"},
        }
        if shape not in allowed:
            raise ValueError(f"domain shape must be one of {_SHAPES}, got {shape!r}")
        unknown = set(cfg) - allowed[shape]
        if unknown:
            raise ValueError(f"unknown {shape} parameters: {sorted(unknown)}")
        return getattr(cls, shape)(**cfg)

    def to_config(self) -> dict[str, Any]:
        if self.shape == "interval":
            return {"shape": "interval", "a": self.params[0], "b": self.params[1]}
        if self.shape == "disk":
            return {"shape": "disk", "center": list(self.params[0]), "radius": self.params[1]}
        return {"shape": "square", "corner": list(self.params[0]), "side": self.params[1]}

    @property
    def dim(self) -> int:
        return 1 if self.shape == "interval" else 2

    @property
    def measure(self) -> float:
        if self.shape == "interval":
            a, b = self.params
            return b - a
        if self.shape == "disk":
            return np.pi * self.params[1] ** 2
        return self.params[1] ** 2

    @property
    def diameter(self) -> float:
        if self.shape == "interval":
            a, b = self.params
            return b - a
        if self.shape == "disk":
            return 2.0 * self.params[1]
        return np.sqrt(2.0) * self.params[1]

    @property
    def dist_to_origin(self) -> float:
        """Distance from the origin to the closed domain."""
        if self.shape == "interval":
            a, b = self.params
            return float(max(a, 0.0, -b))
        if self.shape == "disk":
            center, radius = self.params
            return max(0.0, float(np.hypot(*center)) - radius)
        corner, side = self.params
        gap = [max(c - 0.0, 0.0, 0.0 - (c + side)) for c in corner]
        return float(np.hypot(*gap))

    @property
    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        if self.shape == "interval":
            a, b = self.params
            return np.array([a]), np.array([b])
        if self.shape == "disk":
            center, radius = self.params
            c = np.asarray(center)
            return c - radius, c + radius
        corner, side = self.params
        c = np.asarray(corner)
        return c, c + side

    @property
    def incenter(self) -> np.ndarray:
        lo, hi = self.bounding_box
        return 0.5 * (lo + hi)

    def contains(self, points) -> np.ndarray:
        """Strict interior test, vectorized over rows of ``points``."""
        x = _as_points(points, self.dim)
        if self.shape == "interval":
            a, b = self.params
            return (x[:, 0] > a) & (x[:, 0] < b)
        if self.shape == "disk":
            center, radius = self.params
            return np.hypot(x[:, 0] - center[0], x[:, 1] - center[1]) < radius
        corner, side = self.params
        lo = np.asarray(corner)
        return np.all((x > lo) & (x < lo + side), axis=1)


def _as_points(points, dim: int) -> np.ndarray:
    x = np.asarray(points, dtype=float)
    if dim == 1 and x.ndim <= 1:
        return x.reshape(-1, 1)
    x = np.atleast_2d(x)
    if x.shape[1] != dim:
        raise ValueError(f"expected points with {dim} coordinates, got shape {x.shape}")
    return x


def boundary_distance(domain: Domain, points) -> np.ndarray | float:
    """Euclidean distance from each point to the boundary of ``domain``.

    Exterior points get their (positive) distance as well; use
    ``domain.contains`` to tell the two apart. A single point returns a float.
    """
    scalar = np.ndim(points) == 0 or (domain.dim == 2 and np.ndim(points) == 1)
    x = _as_points(points, domain.dim)
    if domain.shape == "interval":
        a, b = domain.params
        d = np.minimum(np.abs(x[:, 0] - a), np.abs(b - x[:, 0]))
        inside = domain.contains(x)
        # outside the interval the nearest endpoint is the boundary
        d = np.where(inside, d, np.minimum(np.abs(x[:, 0] - a), np.abs(x[:, 0] - b)))
    elif domain.shape == "disk":
        center, radius = domain.params
        d = np.abs(radius - np.hypot(x[:, 0] - center[0], x[:, 1] - center[1]))
    else:
        corner, side = domain.params
        lo = np.asarray(corner)
        hi = lo + side
        inside = domain.contains(x)
        d_in = np.min(np.concatenate([x - lo, hi - x], axis=1), axis=1)
        gap = np.maximum(np.maximum(lo - x, x - hi), 0.0)
        d_out = np.hypot(gap[:, 0], gap[:, 1])
        # points on the square's own boundary lines but outside it: d_out is exact
        d = np.where(inside, d_in, d_out)
        on_edge = ~inside & (d_out == 0.0)
        d = np.where(on_edge, 0.0, d)
    return float(d[0]) if scalar else d


@dataclass(frozen=True, eq=False)
class Grid:
    """Cell-centred lattice nodes strictly inside a domain.

    Attributes:
        domain: the underlying domain.
        h: lattice spacing.
        nodes: ``(n, N)`` array of cell centres.
        index: ``(n, N)`` integer lattice indices; ``nodes = origin + h*(index + 1/2)``.
        origin: lattice anchor (lower corner of the bounding box).
        delta: boundary distance of every node.
        tail_radius: radius R with R >= 1/3 + 4/3 (diam + dist(0, domain)).
    """

    domain: Domain
    h: float
    nodes: np.ndarray
    index: np.ndarray
    origin: np.ndarray
    delta: np.ndarray
    tail_radius: float
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def dim(self) -> int:
        return self.domain.dim

    @property
    def n(self) -> int:
        return self.nodes.shape[0]

    @property
    def cell_measure(self) -> float:
        return self.h ** self.dim

    @property
    def total_measure(self) -> float:
        return self.n * self.cell_measure

    @property
    def x(self) -> np.ndarray:
        """First coordinate of every node (the only one in 1D)."""
        return self.nodes[:, 0]

    def field(self, values) -> "Field":
        return Field(self, values)

    def evaluate(self, fn) -> "Field":
        """Sample ``fn`` at the nodes. In 1D ``fn`` receives a flat array."""
        pts = self.nodes[:, 0] if self.dim == 1 else self.nodes
        return Field(self, np.broadcast_to(np.asarray(fn(pts), dtype=float), (self.n,)).copy())

    def zeros(self) -> "Field":
        return Field(self, np.zeros(self.n))

    def ones(self) -> "Field":
        return Field(self, np.ones(self.n))


def make_grid(domain: Domain, h: float) -> Grid:
    """Keep every lattice cell of spacing ``h`` whose centre is inside ``domain``."""
    if not h > 0:
        raise ValueError(f"grid spacing must be positive, got {h}")
    lo, hi = domain.bounding_box
    counts = np.ceil((hi - lo) / h - 1e-9).astype(int)
    axes = [np.arange(c) for c in counts]
    idx = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, domain.dim)
    centers = lo + h * (idx + 0.5)
    keep = domain.contains(centers)
    idx, centers = idx[keep], centers[keep]
    if centers.shape[0] < 3 or np.any(counts < 3):
        raise ValueError(
            f"h={h} is too coarse for {domain.shape}: fewer than 3 nodes across the domain"
        )
    delta = np.asarray(boundary_distance(domain, centers), dtype=float)
    R = 1.0 / 3.0 + 4.0 / 3.0 * (domain.diameter + domain.dist_to_origin)
    return Grid(domain, float(h), centers, idx, lo.astype(float), delta, R)


class Field:
    """Nodal values on a grid; identically zero outside the domain."""

    __slots__ = ("grid", "values")

    def __init__(self, grid: Grid, values):
        values = np.asarray(values, dtype=float)
        if values.shape != (grid.n,):
            raise ValueError(f"field needs {grid.n} values, got shape {values.shape}")
        self.grid = grid
        self.values = values

    def __repr__(self):
        return f"Field(n={self.grid.n}, max|u|={np.max(np.abs(self.values)):.4g})"

    def _wrap(self, values):
        return Field(self.grid, values)

    def _other(self, other):
        if isinstance(other, Field):
            if other.grid is not self.grid:
                raise ValueError("fields live on different grids")
            return other.values
        return other

    def __add__(self, other):
        return self._wrap(self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return self._wrap(self.values - self._other(other))

    def __rsub__(self, other):
        return self._wrap(self._other(other) - self.values)

    def __mul__(self, other):
        return self._wrap(self.values * self._other(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self._wrap(self.values / self._other(other))

    def __neg__(self):
        return self._wrap(-self.values)

    def __abs__(self):
        return self._wrap(np.abs(self.values))

    def __pow__(self, p):
        return self._wrap(self.values ** p)

    def max(self) -> float:
        return float(np.max(self.values))

    def min(self) -> float:
        return float(np.min(self.values))

    def integral(self) -> float:
        return float(np.sum(self.values) * self.grid.cell_measure)

    def inner(self, other: "Field") -> float:
        """Cell-measure weighted inner product over the domain."""
        return float(np.dot(self.values, self._other(other)) * self.grid.cell_measure)

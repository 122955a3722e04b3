"""Discrete function-space quantities: Lebesgue, Gagliardo, Stein and Hölder.

Every norm is taken over the whole space. Fields vanish outside the domain,
so exterior contributions enter only through the kernels: the radial tails
for the Gagliardo double integral, and an explicit exterior evaluation of the
Stein functional for the Stein norm.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy.signal import fftconvolve
from scipy.special import gamma

from .domain_grid import Field, Grid
from .fracops import (
    _row_blocks,
    _table,
    cell_weights,
    kernel_constants,
    stein_functional,
)

__all__ = [
    "NormReport",
    "lebesgue_norm",
    "exterior_tail",
    "gagliardo_seminorm",
    "sobolev_norm",
    "stein_norm",
    "stein_exterior_norm",
    "holder_seminorm",
    "interpolation_defect",
    "interpolation_theta",
    "measure_embedding_constant",
]


@dataclass(frozen=True)
class NormReport:
    kind: str
    params: dict
    value: float
    h: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def _values(u) -> tuple[np.ndarray, float]:
    if isinstance(u, Field):
        return u.values, u.grid.cell_measure
    raise TypeError(f"expected a Field, got {type(u).__name__}")


def lebesgue_norm(u, p: float, cell_measure: float | None = None) -> float:
    """``(sum |u_i|^p |cell|)^(1/p)``; ``p = inf`` gives the max norm.

    ``u`` is a Field, or a plain array together with ``cell_measure``.
    """
    if cell_measure is None:
        v, w = _values(u)
    else:
        v, w = np.asarray(u, dtype=float), float(cell_measure)
    if p == np.inf:
        return float(np.max(np.abs(v))) if v.size else 0.0
    if p < 1:
        raise ValueError(f"Lebesgue exponent must be >= 1, got {p}")
    a = np.abs(v)
    m = a.max() if a.size else 0.0
    if m == 0.0:
        return 0.0
    # factor out the max to keep large exponents finite
    return float(m * (np.sum((a / m) ** p) * w) ** (1.0 / p))


def _exit_distance(grid: Grid, x: np.ndarray, d: np.ndarray) -> np.ndarray:
    """Distance from interior points ``x`` (n, 2) along unit directions ``d`` (M, 2) to the boundary."""
    dom = grid.domain
    if dom.shape == "disk":
        center, radius = dom.params
        z = x - np.asarray(center)
        b = z @ d.T
        return -b + np.sqrt(np.maximum(b * b - np.sum(z * z, axis=1)[:, None] + radius ** 2, 0.0))
    corner, side = dom.params
    lo = np.asarray(corner, dtype=float)
    hi = lo + side
    out = np.full((x.shape[0], d.shape[0]), np.inf)
    with np.errstate(divide="ignore"):
        for k in range(2):
            dk = d[:, k]
            step = np.where(dk > 0, (hi[k] - x[:, k, None]) / dk, (lo[k] - x[:, k, None]) / dk)
            out = np.minimum(out, np.where(dk != 0, step, np.inf))
    return out


def exterior_tail(grid: Grid, order: float, n_angles: int = 2048) -> np.ndarray:
    """``int_{R^N minus Omega} |x_i - y|^-(N + 2 order) dy`` at every node.

    The domains are convex, so along each ray the exterior starts at the exit
    distance ``rho`` and the radial integral is ``rho^(-2 order) / (2 order)``.
    In 1D the two rays give a closed form; in 2D the angle integral uses the
    periodic trapezoid rule. Unlike ``complement minus row sum`` this has no
    cancellation, which matters once ``sigma p`` is large.
    """
    e = 2.0 * order
    if grid.dim == 1:
        a, b = grid.domain.params
        x = grid.x
        return ((x - a) ** (-e) + (b - x) ** (-e)) / e
    theta = np.linspace(0.0, 2.0 * np.pi, n_angles, endpoint=False)
    d = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    out = np.empty(grid.n)
    for blk in _row_blocks(grid.n, 256):
        rho = _exit_distance(grid, grid.nodes[blk], d)
        out[blk] = np.mean(rho ** (-e), axis=1) * (2.0 * np.pi) / e
    return out


def gagliardo_seminorm(u: Field, sigma: float, p: float) -> float:
    """Discrete ``W_0^{sigma,p}`` seminorm over ``(Omega x R^N) u ((R^N \\ Omega) x Omega)``.

    Node pairs use cell-integrated kernels ``|x-y|^-(N+sigma p)``; the
    exterior strip enters through :func:`exterior_tail`.
    """
    if not 0.0 < sigma < 1.0:
        raise ValueError(f"sigma must lie in (0, 1), got {sigma}")
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    grid = u.grid
    order = sigma * p / 2.0
    v = u.values
    tail = exterior_tail(grid, order)
    total = 2.0 * np.sum(np.abs(v) ** p * tail)
    for blk in _row_blocks(grid.n):
        W = cell_weights(grid, "singular", order, rows=blk)
        total += np.sum(W * np.abs(v[blk, None] - v[None, :]) ** p)
    return float((total * grid.cell_measure) ** (1.0 / p))


def sobolev_norm(u: Field, sigma: float, p: float) -> float:
    """Full ``W^{sigma,p}`` norm ``(||u||_p^p + [u]^p)^(1/p)``."""
    return float((lebesgue_norm(u, p) ** p + gagliardo_seminorm(u, sigma, p) ** p) ** (1.0 / p))


def _sphere_area(N: int) -> float:
    return 2.0 * np.pi ** (N / 2) / gamma(N / 2)


def _exterior_lattice(grid: Grid, radius: float) -> np.ndarray:
    """Lattice indices of cells outside the grid whose centres lie within ``radius`` of the incentre."""
    key = ("exterior", float(radius))
    hit = grid._cache.get(key)
    if hit is not None:
        return hit
    c = grid.domain.incenter
    lo = np.floor((c - radius - grid.origin) / grid.h).astype(int) - 1
    hi = np.ceil((c + radius - grid.origin) / grid.h).astype(int) + 1
    axes = [np.arange(a, b + 1) for a, b in zip(lo, hi)]
    idx = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, grid.dim)
    centers = grid.origin + grid.h * (idx + 0.5)
    near = np.sqrt(np.sum((centers - c) ** 2, axis=1)) < radius
    idx = idx[near]
    kept = {tuple(r) for r in grid.index}
    ext = np.array([r for r in map(tuple, idx) if r not in kept], dtype=int).reshape(-1, grid.dim)
    grid._cache[key] = ext
    return ext


def stein_exterior_norm(u: Field, sigma: float, p: float, radius: float | None = None) -> float:
    """``||D_sigma u||_{L^p(R^N \\ Omega)}``.

    Exterior lattice cells within ``radius`` of the incentre are summed
    directly; beyond it the far-field ``D_sigma u(x)^2 ~ a/2 ||u||_2^2 |x|^-(N+2 sigma)``
    is integrated in closed form.
    """
    grid = u.grid
    N = grid.dim
    if radius is None:
        radius = 2.0 * grid.domain.diameter
    a = kernel_constants(N, sigma).a
    ext = _exterior_lattice(grid, radius)
    v2 = u.values ** 2
    # the exterior energy density is a lattice convolution of u^2 with the kernel table
    idx = grid.index
    lo = np.minimum(idx.min(axis=0), ext.min(axis=0))
    hi = np.maximum(idx.max(axis=0), ext.max(axis=0))
    box = np.zeros(tuple(hi - lo + 1))
    box[tuple((idx - lo).T)] = v2
    K = int(np.max(hi - lo))
    tab = _table(grid, "singular", sigma, K)
    Kt = (tab.shape[0] - 1) // 2
    conv = fftconvolve(box, tab, mode="full")
    vals = 0.5 * a * np.maximum(conv[tuple((ext - lo + Kt).T)], 0.0)
    near = np.sum(vals ** (p / 2)) * grid.cell_measure
    decay = (N + 2 * sigma) * p / 2 - N
    mass = 0.5 * a * np.sum(v2) * grid.cell_measure
    far = mass ** (p / 2) * _sphere_area(N) * radius ** (-decay) / decay
    return float((near + far) ** (1.0 / p))


def stein_norm(u: Field, sigma: float, p: float, *, lebesgue_part: bool = True) -> float:
    """Triple-bar norm ``||u||_p + ||D_sigma u||_{L^p(R^N)}``.

    Requires ``p > 2N/(N + 2 sigma)``, the range where the Stein functional
    yields an equivalent Bessel-potential norm. With ``lebesgue_part=False``
    only the Stein term is returned.
    """
    if not 0.0 < sigma < 1.0:
        raise ValueError(f"sigma must lie in (0, 1), got {sigma}")
    N = u.grid.dim
    if not p > 2 * N / (N + 2 * sigma):
        raise ValueError(
            f"stein norm needs 2N/(N+2 sigma) < p; got p={p}, bound={2 * N / (N + 2 * sigma):.6g}"
        )
    D = stein_functional(u, sigma)
    inner = lebesgue_norm(D, p) ** p if np.any(D.values) else 0.0
    outer = stein_exterior_norm(u, sigma, p) ** p
    total = (inner + outer) ** (1.0 / p)
    if lebesgue_part:
        total += lebesgue_norm(u, p)
    return float(total)


def holder_seminorm(u: Field, sigma: float) -> float:
    """``max_{i != j} |u_i - u_j| / |x_i - x_j|^sigma``."""
    if not 0.0 < sigma <= 1.0:
        raise ValueError(f"sigma must lie in (0, 1], got {sigma}")
    grid = u.grid
    v, X = u.values, grid.nodes
    best = 0.0
    for blk in _row_blocks(grid.n):
        d = np.sqrt(np.sum((X[blk, None, :] - X[None, :, :]) ** 2, axis=-1))
        num = np.abs(v[blk, None] - v[None, :])
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(d > 0, num / d ** sigma, 0.0)
        best = max(best, float(ratio.max()))
    return best


def interpolation_theta(q: float, eta: float, r: float) -> float:
    """``theta`` with ``1/q = theta/(1+eta) + (1-theta)/r``."""
    return (1.0 / q - 1.0 / r) / (1.0 / (1.0 + eta) - 1.0 / r)


def interpolation_defect(g: Field, q: float, eta: float, r: float) -> float:
    """``||g||_q - ||g||_{1+eta}^theta ||g||_r^(1-theta)``, never positive beyond roundoff."""
    if not 1.0 + eta < q < r:
        raise ValueError(f"need 1+eta < q < r, got eta={eta}, q={q}, r={r}")
    theta = interpolation_theta(q, eta, r)
    lhs = lebesgue_norm(g, q)
    rhs = lebesgue_norm(g, 1.0 + eta) ** theta * lebesgue_norm(g, r) ** (1.0 - theta)
    return float(lhs - rhs)


def measure_embedding_constant(
    fields, sigma: float, sigma_prime: float, p: float
) -> float:
    """Largest ratio ``||u||_{W^{sigma,p}} / ||u||_{W^{sigma',p}}`` over ``fields`` (at least 1)."""
    if not sigma <= sigma_prime:
        raise ValueError(f"need sigma <= sigma', got {sigma} > {sigma_prime}")
    k = 1.0
    for u in fields:
        den = sobolev_norm(u, sigma_prime, p)
        if den > 0:
            k = max(k, sobolev_norm(u, sigma, p) / den)
    return float(k)

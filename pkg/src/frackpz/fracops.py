"""Nonlocal operators on cell-centred grids.

All operators are discretized the same way: a field is piecewise constant on
the lattice cells kept by the grid and zero elsewhere, and every kernel is
integrated exactly (1D) or by composite Gauss rules (2D) over each cell.
Because the lattice is uniform, the cell integral between node ``i`` and cell
``j`` depends only on the index offset ``index[j] - index[i]``; we tabulate
those integrals once on the unit lattice and rescale by the kernel's
homogeneity.

The exterior contribution of the strongly singular kernels is obtained from

    tail_i = int_{R^N minus cell_i} K  -  sum_{j != i} w_ij

where the first term is a closed-form constant times ``h**(-2 sigma)``. This
is the exact integral of the kernel over the complement of the kept cells, so
the zero exterior condition is enforced without truncation.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.special import gamma

from .domain_grid import Field, Grid, _as_points, boundary_distance

__all__ = [
    "KernelConstants",
    "OperatorMatrix",
    "VectorField",
    "kernel_constants",
    "assemble_frac_laplacian",
    "apply_half_laplacian",
    "half_laplacian",
    "riesz_gradient",
    "stein_functional",
    "stein_functional_at",
    "riesz_potential",
    "cell_weights",
    "lattice_weights",
]

_lock = threading.Lock()


def _check_order(value: float, name: str, hi: float = 1.0) -> float:
    value = float(value)
    if not 0.0 < value < hi:
        raise ValueError(f"{name} must lie in (0, {hi:g}), got {value}")
    return value


@dataclass(frozen=True)
class KernelConstants:
    N: int
    sigma: float
    a: float
    mu: float


def kernel_constants(N: int, sigma: float) -> KernelConstants:
    """Normalization constants of the fractional Laplacian and Riesz gradient.

    ``a`` normalizes ``(-Delta)^sigma`` (kernel ``|z|^-(N+2 sigma)``) and ``mu``
    normalizes the Riesz ``sigma``-gradient (kernel ``z/|z|^(N+sigma+1)``).
    """
    if sigma in (0.0, 1.0):
        raise ValueError(f"sigma={sigma} hits a pole of the gamma function")
    sigma = _check_order(sigma, "sigma")
    a = -(2.0 ** (2 * sigma)) * gamma(N / 2 + sigma) / (np.pi ** (N / 2) * gamma(-sigma))
    mu = 2.0 ** sigma * gamma((N + sigma + 1) / 2) / (np.pi ** (N / 2) * gamma((1 - sigma) / 2))
    return KernelConstants(int(N), sigma, float(a), float(mu))


# ---------------------------------------------------------------------------
# unit-lattice cell integrals


_GL_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _gauss(p: int) -> tuple[np.ndarray, np.ndarray]:
    if p not in _GL_CACHE:
        _GL_CACHE[p] = np.polynomial.legendre.leggauss(p)
    return _GL_CACHE[p]


def _square_rule(center: np.ndarray, size: float, sub: int, p: int):
    """Composite tensor Gauss rule on axis-aligned squares.

    ``center`` has shape ``(m, 2)``; returns points ``(m, Q, 2)`` and weights ``(Q,)``.
    """
    xg, wg = _gauss(p)
    step = size / sub
    offs = (np.arange(sub) + 0.5) * step - size / 2
    x1 = (offs[:, None] + 0.5 * step * xg[None, :]).ravel()
    w1 = np.tile(0.5 * step * wg, sub)
    X, Y = np.meshgrid(x1, x1, indexing="ij")
    W = np.outer(w1, w1).ravel()
    pts = np.stack([X.ravel(), Y.ravel()], axis=-1)
    return center[:, None, :] + pts[None, :, :], W


def _kernel_values(z: np.ndarray, kind: str, order: float) -> np.ndarray:
    """Kernel evaluated at displacements ``z = y - x`` (last axis = components)."""
    r = np.sqrt(np.sum(z * z, axis=-1))
    N = z.shape[-1]
    if kind == "singular":
        return r ** (-(N + 2 * order))
    if kind == "potential":
        return r ** (-(N - order))
    if kind == "riesz":
        # kernel (x - y)/|x - y|^(N+t+1) with x - y = -z
        return -z * (r ** (-(N + order + 1)))[..., None]
    raise ValueError(kind)


def _self_cell_2d(kind: str, order: float) -> float:
    """Integral of the kernel over the unit cell (potential) or its complement (singular)."""
    if kind == "potential":
        fn = lambda th: (0.5 / np.cos(th)) ** order / order
    else:
        fn = lambda th: (2.0 * np.cos(th)) ** (2 * order) / (2 * order)
    val, _ = integrate.quad(fn, 0.0, np.pi / 4, epsabs=0, epsrel=1e-13, limit=200)
    return 8.0 * val


def _unit_table(N: int, kind: str, order: float, K: int) -> np.ndarray:
    """Cell integrals on the unit lattice for offsets in ``[-K, K]^N``.

    The centre entry is the self-cell integral for the weakly singular
    potential kernel and zero otherwise (principal value / odd symmetry).
    """
    if N == 1:
        k = np.abs(np.arange(-K, K + 1, dtype=float))
        lo, hi = np.maximum(k - 0.5, 0.0), k + 0.5
        with np.errstate(divide="ignore", invalid="ignore"):
            if kind == "singular":
                s2 = 2 * order
                tab = (lo ** (-s2) - hi ** (-s2)) / s2
                tab[K] = 0.0
            elif kind == "potential":
                tab = (hi ** order - lo ** order) / order
                tab[K] = 2.0 * 0.5 ** order / order
            else:
                d = np.arange(-K, K + 1, dtype=float)
                mag = (lo ** (-order) - hi ** (-order)) / order
                tab = (-np.sign(d) * mag)[:, None]
                tab[K] = 0.0
        return tab

    # 2D: evaluate on the octant 0 <= l <= k and unfold by symmetry
    kk, ll = np.meshgrid(np.arange(K + 1), np.arange(K + 1), indexing="ij")
    sel = ll <= kk
    ks, ls = kk[sel], ll[sel]
    centers = np.stack([ks, ls], axis=-1).astype(float)
    ncomp = 2 if kind == "riesz" else 1
    vals = np.zeros((centers.shape[0], ncomp))
    near = np.maximum(ks, ls) <= 3
    for mask, sub, p in ((near, 8, 8), (~near, 1, 8)):
        idx = np.nonzero(mask & ((ks > 0) | (ls > 0)))[0]
        for chunk in np.array_split(idx, max(1, len(idx) // 2048)):
            if len(chunk) == 0:
                continue
            pts, w = _square_rule(centers[chunk], 1.0, sub, p)
            kv = _kernel_values(pts, kind, order)
            if ncomp == 1:
                vals[chunk, 0] = kv @ w
            else:
                vals[chunk] = np.einsum("mqc,q->mc", kv, w)
    oct_tab = np.zeros((K + 1, K + 1, ncomp))
    oct_tab[ks, ls] = vals
    # reflect across the diagonal; the riesz components swap
    full_q = oct_tab.copy()
    full_q[ls, ks] = vals[:, ::-1] if ncomp == 2 else vals
    if kind == "potential":
        full_q[0, 0, 0] = _self_cell_2d(kind, order)
    tab = np.zeros((2 * K + 1, 2 * K + 1, ncomp))
    for sx in (1, -1):
        for sy in (1, -1):
            block = full_q.copy()
            if ncomp == 2:
                block[..., 0] *= sx
                block[..., 1] *= sy
            ix = K + sx * np.arange(K + 1)
            iy = K + sy * np.arange(K + 1)
            tab[np.ix_(ix, iy)] = block
    return tab[..., 0] if ncomp == 1 else tab


def _scale(kind: str, order: float, h: float) -> float:
    if kind == "singular":
        return h ** (-2 * order)
    if kind == "potential":
        return h ** order
    return h ** (-order)


def _table(grid: Grid, kind: str, order: float, K: int | None = None) -> np.ndarray:
    span = int(np.max(grid.index.max(axis=0) - grid.index.min(axis=0)))
    K = span if K is None else max(K, span)
    key = ("table", kind, float(order))
    with _lock:
        tab = grid._cache.get(key)
    if tab is None or (tab.shape[0] - 1) // 2 < K:
        tab = _unit_table(grid.dim, kind, order, K) * _scale(kind, order, grid.h)
        with _lock:
            grid._cache[key] = tab
    return tab


def lattice_weights(grid: Grid, kind: str, order: float, targets: np.ndarray) -> np.ndarray:
    """Weights from lattice points ``targets`` (integer indices, any location) to all cells."""
    targets = np.asarray(targets, dtype=int).reshape(-1, grid.dim)
    idx = grid.index
    K = 0
    if len(targets):
        K = int(max(np.max(idx.max(axis=0) - targets.min(axis=0)),
                    np.max(targets.max(axis=0) - idx.min(axis=0))))
    tab = _table(grid, kind, order, K)
    Kt = (tab.shape[0] - 1) // 2
    d = idx[None, :, :] - targets[:, None, :] + Kt
    if grid.dim == 1:
        return tab[d[..., 0]]
    return tab[d[..., 0], d[..., 1]]


def cell_weights(grid: Grid, kind: str, order: float, rows=None) -> np.ndarray:
    """Dense node-to-cell weights ``w_ij`` (rows restricted to ``rows`` if given).

    ``kind`` is ``"singular"`` (kernel ``|z|^-(N+2 order)``), ``"potential"``
    (kernel ``|z|^-(N-order)``) or ``"riesz"`` (vector kernel, trailing axis).
    """
    r = grid.index if rows is None else grid.index[rows]
    return lattice_weights(grid, kind, order, r)


def _complement_integral(grid: Grid, order: float) -> float:
    """Integral of ``|z|^-(N+2 order)`` outside one cell."""
    if grid.dim == 1:
        c = 2.0 * 0.5 ** (-2 * order) / (2 * order)
    else:
        c = _self_cell_2d("singular", order)
    return c * grid.h ** (-2 * order)


def _row_blocks(n: int, size: int = 512):
    for start in range(0, n, size):
        yield slice(start, min(start + size, n))


# ---------------------------------------------------------------------------
# fractional Laplacian


@dataclass(frozen=True, eq=False)
class OperatorMatrix:
    """Dense discretization of ``(-Delta)^sigma`` acting on nodal values.

    ``matrix`` already contains the normalization constant, the row sums of
    the off-diagonal weights and the exterior tail on its diagonal.
    """

    grid: Grid
    sigma: float
    matrix: np.ndarray
    tail: np.ndarray
    constant: float

    def __matmul__(self, u):
        if isinstance(u, Field):
            return Field(self.grid, self.matrix @ u.values)
        return self.matrix @ np.asarray(u)

    def apply(self, u: Field) -> Field:
        return self @ u


def _assemble(grid: Grid, sigma: float) -> OperatorMatrix:
    a = kernel_constants(grid.dim, sigma).a
    n = grid.n
    A = np.empty((n, n))
    comp = _complement_integral(grid, sigma)
    tail = np.empty(n)
    for blk in _row_blocks(n):
        W = cell_weights(grid, "singular", sigma, rows=blk)
        rowsum = W.sum(axis=1)
        tail[blk] = comp - rowsum
        W *= -a
        A[blk] = W
        ii = np.arange(blk.start, blk.stop)
        A[ii, ii] = a * (rowsum + tail[blk])
    return OperatorMatrix(grid, sigma, A, tail, a)


def assemble_frac_laplacian(grid: Grid, sigma: float, cache: bool = True) -> OperatorMatrix:
    """Assemble ``(-Delta)^sigma`` with zero exterior condition.

    Row ``i`` computes ``a_{N,sigma} [sum_j w_ij (u_i - u_j) + tail_i u_i]``.
    The same-cell principal value is dropped (it is O(h^(2-2 sigma)) for
    smooth data).
    """
    sigma = _check_order(sigma, "sigma")
    key = ("fraclap", sigma)
    if cache:
        with _lock:
            op = grid._cache.get(key)
        if op is not None:
            return op
    op = _assemble(grid, sigma)
    if cache:
        with _lock:
            grid._cache[key] = op
    return op


def half_laplacian(u: Field, t: float) -> Field:
    """``(-Delta)^(t/2) u`` at every node."""
    t = _check_order(t, "t")
    return assemble_frac_laplacian(u.grid, t / 2) @ u


def _point_cell_integrals(grid: Grid, points: np.ndarray, exponent: float) -> np.ndarray:
    """``int_{cell_j} |x - y|^-exponent dy`` for arbitrary points x (rows) and all cells."""
    h = grid.h
    if grid.dim == 1:
        d = np.abs(points[:, 0][:, None] - grid.nodes[:, 0][None, :])
        lo, hi = np.maximum(d - h / 2, 0.0), d + h / 2
        e = exponent - 1.0
        if abs(e) < 1e-14:
            return np.log(hi / lo)
        return (lo ** (-e) - hi ** (-e)) / e
    out = np.empty((points.shape[0], grid.n))
    for k, x in enumerate(points):
        z = grid.nodes - x
        dist = np.max(np.abs(z), axis=1)
        near = dist < 3 * h
        for mask, sub, p in ((near, 8, 6), (~near, 1, 6)):
            if not np.any(mask):
                continue
            pts, w = _square_rule(z[mask], h, sub, p)
            r = np.sqrt(np.sum(pts * pts, axis=-1))
            out[k, mask] = (r ** (-exponent)) @ w
    return out


def _match_nodes(grid: Grid, pts: np.ndarray) -> np.ndarray:
    """Node index of each point, or -1 when the point is not a node."""
    rel = (pts - grid.origin) / grid.h - 0.5
    idx = np.rint(rel).astype(int)
    ok = np.all(np.abs(rel - idx) < 1e-9, axis=1)
    lookup = {tuple(r): i for i, r in enumerate(grid.index)}
    return np.array(
        [lookup.get(tuple(r), -1) if good else -1 for r, good in zip(idx, ok)], dtype=int
    )


def apply_half_laplacian(u: Field, t: float, eval_points) -> np.ndarray:
    """Evaluate ``(-Delta)^(t/2) u`` at nodes or at exterior points.

    Interior evaluation points must be grid nodes. Outside the domain the
    principal value disappears and the value is
    ``-a_{N,t/2} int u(y)/|x-y|^(N+t) dy``.

    Raises:
        ValueError: for exterior points within ``h/2`` of the boundary
            (boundary-layer point) or interior points that are not nodes.
    """
    t = _check_order(t, "t")
    grid = u.grid
    pts = _as_points(eval_points, grid.dim)
    inside = grid.domain.contains(pts)
    out = np.empty(pts.shape[0])
    if np.any(inside):
        node = _match_nodes(grid, pts[inside])
        if np.any(node < 0):
            raise ValueError("interior evaluation points must coincide with grid nodes")
        out[inside] = (assemble_frac_laplacian(grid, t / 2) @ u.values)[node]
    if np.any(~inside):
        ext = pts[~inside]
        dist = np.atleast_1d(boundary_distance(grid.domain, ext))
        if np.any(dist < grid.h / 2):
            raise ValueError("boundary-layer point: exterior point within h/2 of the boundary")
        a = kernel_constants(grid.dim, t / 2).a
        W = _point_cell_integrals(grid, ext, grid.dim + t)
        out[~inside] = -a * (W @ u.values)
    return out


# ---------------------------------------------------------------------------
# Riesz gradient and Stein functional


class VectorField:
    """One N-vector per node."""

    __slots__ = ("grid", "values")

    def __init__(self, grid: Grid, values):
        values = np.asarray(values, dtype=float)
        if values.shape != (grid.n, grid.dim):
            raise ValueError(f"vector field needs shape {(grid.n, grid.dim)}, got {values.shape}")
        self.grid = grid
        self.values = values

    def magnitude(self) -> Field:
        return Field(self.grid, np.sqrt(np.sum(self.values ** 2, axis=1)))


def _riesz_matrices(grid: Grid, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-component weight matrices ``V[c]`` and the exterior tail vectors."""
    key = ("riesz", t)
    with _lock:
        hit = grid._cache.get(key)
    if hit is not None:
        return hit
    n, N = grid.n, grid.dim
    V = np.empty((N, n, n))
    for blk in _row_blocks(n):
        Wb = cell_weights(grid, "riesz", t, rows=blk)
        for c in range(N):
            V[c, blk] = Wb[..., c]
    # the odd kernel integrates to zero over the complement of the own cell
    tail = -V.sum(axis=2).T
    with _lock:
        grid._cache[key] = (V, tail)
    return V, tail


def riesz_gradient(u: Field, t: float) -> VectorField:
    """Riesz ``t``-gradient ``mu_{N,t} int (x-y)(u(x)-u(y))/|x-y|^(N+t+1) dy``."""
    t = _check_order(t, "t")
    grid = u.grid
    mu = kernel_constants(grid.dim, t).mu
    V, tail = _riesz_matrices(grid, t)
    v = u.values
    comps = [V[c].sum(axis=1) * v - V[c] @ v + tail[:, c] * v for c in range(grid.dim)]
    return VectorField(grid, mu * np.stack(comps, axis=1))


def _stein_parts(grid: Grid, t: float):
    key = ("stein", t)
    with _lock:
        hit = grid._cache.get(key)
    if hit is not None:
        return hit
    n = grid.n
    W = np.empty((n, n))
    for blk in _row_blocks(n):
        W[blk] = cell_weights(grid, "singular", t, rows=blk)
    total = np.full(n, _complement_integral(grid, t))
    with _lock:
        grid._cache[key] = (W, total)
    return W, total


def stein_functional(u: Field, t: float) -> Field:
    """Stein ``t``-functional ``sqrt(a_{N,t}/2 int (u(x)-u(y))^2/|x-y|^(N+2t) dy)`` at nodes."""
    t = _check_order(t, "t")
    grid = u.grid
    a = kernel_constants(grid.dim, t).a
    W, total = _stein_parts(grid, t)
    v = u.values
    rowsum = W.sum(axis=1)
    tail = total - rowsum
    # sum_j w_ij (v_i - v_j)^2 expanded; clipped at zero against roundoff
    quad = v * v * rowsum - 2 * v * (W @ v) + W @ (v * v) + tail * v * v
    return Field(grid, np.sqrt(0.5 * a * np.maximum(quad, 0.0)))


def stein_functional_at(u: Field, t: float, points) -> np.ndarray:
    """Stein functional at points outside the domain, where ``u(x) = 0``."""
    t = _check_order(t, "t")
    grid = u.grid
    pts = _as_points(points, grid.dim)
    if np.any(grid.domain.contains(pts)):
        raise ValueError("stein_functional_at expects exterior points")
    a = kernel_constants(grid.dim, t).a
    out = np.empty(pts.shape[0])
    v2 = u.values ** 2
    for blk in _row_blocks(pts.shape[0], 256):
        W = _point_cell_integrals(grid, pts[blk], grid.dim + 2 * t)
        out[blk] = np.sqrt(0.5 * a * (W @ v2))
    return out


# ---------------------------------------------------------------------------
# Riesz potential


def riesz_potential(g: Field, alpha: float) -> Field:
    """``J_alpha g (x_i) = sum_j g_j int_{cell_j} |x_i - y|^-(N-alpha) dy``."""
    grid = g.grid
    alpha = _check_order(alpha, "alpha", hi=grid.dim)
    out = np.empty(grid.n)
    for blk in _row_blocks(grid.n):
        out[blk] = cell_weights(grid, "potential", alpha, rows=blk) @ g.values
    return Field(grid, out)

"""Fractional Poisson problem with zero exterior datum.

The assembled ``(-Delta)^s`` matrix is symmetric, has non-positive
off-diagonal entries and a strictly dominant diagonal (the exterior tail), so
it is positive definite and its inverse is entrywise non-negative. We factor
it once with Cholesky and reuse the factor for every solve.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import linalg
from scipy.special import gamma

from .domain_grid import Field, Grid, boundary_distance
from .exponents import ptilde
from .fracops import _point_cell_integrals, apply_half_laplacian, assemble_frac_laplacian, riesz_potential
from .norms import lebesgue_norm, stein_norm

__all__ = [
    "GreenOperator",
    "SolverError",
    "green_operator",
    "solve_poisson",
    "CZEstimate",
    "estimate_cz_constant",
    "cz_sample_sources",
    "DecompositionReport",
    "decomposition_diagnostics",
    "make_rng",
    "getoor_constant",
    "ball_torsion",
]

log = logging.getLogger(__name__)


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based generator (Philox), reproducible across platforms for a given seed."""
    return np.random.Generator(np.random.Philox(int(seed)))


class SolverError(RuntimeError):
    """Raised when the discrete operator cannot be factored."""


class GreenOperator:
    """Discrete solution map ``h -> u`` of ``(-Delta)^s u = h`` in the domain, ``u = 0`` outside."""

    def __init__(self, grid: Grid, s: float, cache: bool = True):
        self.grid = grid
        self.s = float(s)
        self.operator = assemble_frac_laplacian(grid, s, cache=cache)
        try:
            self._factor = linalg.cho_factor(self.operator.matrix, lower=False, check_finite=True)
        except linalg.LinAlgError as exc:
            cond = np.linalg.cond(self.operator.matrix)
            raise SolverError(
                f"Cholesky factorization failed (condition estimate {cond:.3e}); grid too degenerate"
            ) from exc

    def __call__(self, h) -> Field:
        values = h.values if isinstance(h, Field) else np.asarray(h, dtype=float)
        if not np.all(np.isfinite(values)):
            raise ValueError("right-hand side must be finite")
        return Field(self.grid, linalg.cho_solve(self._factor, values))

    def matrix(self) -> np.ndarray:
        """Dense Green matrix (columns = responses to unit nodal sources)."""
        return linalg.cho_solve(self._factor, np.eye(self.grid.n))


def green_operator(grid: Grid, s: float) -> GreenOperator:
    """Cached :class:`GreenOperator` for ``(grid, s)``."""
    key = ("green", float(s))
    op = grid._cache.get(key)
    if op is None:
        op = GreenOperator(grid, s)
        grid._cache[key] = op
    return op


def solve_poisson(grid: Grid, s: float, h: Field) -> Field:
    """Solve ``(-Delta)^s u = h`` in the domain with ``u = 0`` outside."""
    if not 0.0 < s < 1.0:
        raise ValueError(f"s must lie in (0, 1), got {s}")
    return green_operator(grid, s)(h)


def getoor_constant(N: int, sigma: float) -> float:
    """``(-Delta)^sigma (1 - |x|^2)_+^sigma`` on the unit ball, ``2^(2 sigma) G(1+sigma) G(N/2+sigma) / G(N/2)``."""
    return float(2 ** (2 * sigma) * gamma(1 + sigma) * gamma(N / 2 + sigma) / gamma(N / 2))


def ball_torsion(grid: Grid, sigma: float) -> Field:
    """Closed-form torsion function ``(R^2 - |x - c|^2)^sigma / Getoor`` on an interval or disk."""
    dom = grid.domain
    if dom.shape == "interval":
        a, b = dom.params
        c, R = np.array([(a + b) / 2]), (b - a) / 2
    elif dom.shape == "disk":
        c, R = np.asarray(dom.params[0], dtype=float), dom.params[1]
    else:
        raise ValueError(f"no closed-form torsion for a {dom.shape}")
    r2 = np.sum((grid.nodes - c) ** 2, axis=1)
    return Field(grid, np.maximum(R * R - r2, 0.0) ** sigma / getoor_constant(grid.dim, sigma))


# ---------------------------------------------------------------------------
# Calderón-Zygmund constant


@dataclass
class CZEstimate:
    s: float
    t: float
    p: float
    m: float
    C: float
    samples: int
    h: float
    seed: int
    ratios: list = field(default_factory=list, repr=False)

    def to_json(self) -> str:
        d = asdict(self)
        d.pop("ratios")
        return json.dumps(d, sort_keys=True)


def cz_sample_sources(grid: Grid, count: int, seed: int) -> list[Field]:
    """Non-negative sources: the constant, smooth random fields and bumps hugging the boundary."""
    rng = make_rng(seed)
    X = grid.nodes
    c = grid.domain.incenter
    scale = grid.domain.diameter
    out = [grid.ones()]
    n_bump = count // 2
    for k in range(1, count):
        if k <= n_bump:
            # concentrate near a random boundary-adjacent node
            near = np.nonzero(grid.delta < 0.15 * scale)[0]
            centre = X[rng.choice(near)]
            width = scale * rng.uniform(0.03, 0.15)
            r2 = np.sum((X - centre) ** 2, axis=1) / width ** 2
            vals = np.exp(-r2) * rng.uniform(0.5, 2.0)
        else:
            freqs = rng.normal(size=(4, grid.dim)) * (2 * np.pi / scale) * 2
            phases = rng.uniform(0, 2 * np.pi, size=4)
            amps = rng.uniform(0.2, 1.0, size=4)
            vals = 1.0 + np.sum(amps * np.cos((X - c) @ freqs.T + phases), axis=1)
            vals = np.maximum(vals, 0.0) + 0.05
        out.append(Field(grid, vals))
    return out


def estimate_cz_constant(
    grid: Grid, s: float, t: float, p: float, m: float, samples: int = 50, seed: int = 0
) -> CZEstimate:
    """Sampled lower envelope of ``sup ||G_s h||_{t,p} / ||h||_{L^m}``.

    The numerator is the Stein form ``||u||_p + ||D_t u||_{L^p(R^N)}``.
    """
    N = grid.dim
    if not (0.0 < s <= t < min(1.0, s * (1.0 + 1.0 / N))):
        raise ValueError(f"CZ estimate needs 0 < s <= t < min(1, s(1+1/N)); got s={s}, t={t}")
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    top = ptilde(m, s, t, N)
    if not 1.0 < p < top:
        raise ValueError(f"CZ estimate needs 1 < p < ptilde(m,s,t) = {top:.6g}; got p={p}")
    if samples < 1:
        raise ValueError("need at least one sample")
    G = green_operator(grid, s)
    ratios = []
    for h in cz_sample_sources(grid, samples, seed):
        u = G(h)
        ratios.append(stein_norm(u, t, p) / lebesgue_norm(h, m))
    return CZEstimate(s, t, p, m, float(max(ratios)), len(ratios), grid.h, seed, ratios)


# ---------------------------------------------------------------------------
# decomposition of the half Laplacian of a solution


@dataclass
class DecompositionReport:
    s: float
    t: float
    shift: float
    g1: np.ndarray
    g2: np.ndarray
    g3: np.ndarray
    lhs: np.ndarray
    C: float
    checked: np.ndarray
    passed: np.ndarray
    med_points: np.ndarray
    med_lhs: np.ndarray
    med_rhs: np.ndarray
    far_points: np.ndarray
    far_lhs: np.ndarray
    far_rhs: np.ndarray

    @property
    def med_ok(self) -> bool:
        return bool(np.all(self.med_lhs <= self.med_rhs))

    @property
    def far_ok(self) -> bool:
        return bool(np.all(self.far_lhs <= self.far_rhs))

    def to_json(self) -> str:
        return json.dumps(
            {
                "s": self.s,
                "t": self.t,
                "shift": self.shift,
                "C": self.C,
                "nodes_checked": int(self.checked.sum()),
                "all_pass": bool(self.passed[self.checked].all()),
                "med_ok": self.med_ok,
                "far_ok": self.far_ok,
            },
            sort_keys=True,
        )


def _exterior_samples(grid: Grid, r_lo: float, r_hi: float, count: int, rng) -> np.ndarray:
    """Random points with ``r_lo <= |x| < r_hi`` and at least ``h/2`` away from the domain."""
    pts = []
    N = grid.dim
    while len(pts) < count:
        if N == 1:
            x = rng.uniform(r_lo, r_hi) * rng.choice([-1.0, 1.0])
            cand = np.array([x])
        else:
            rad = rng.uniform(r_lo, r_hi)
            ang = rng.uniform(0, 2 * np.pi)
            cand = rad * np.array([np.cos(ang), np.sin(ang)])
        if grid.domain.contains(cand[None, :])[0]:
            continue
        if boundary_distance(grid.domain, cand[None, :])[0] < grid.h:
            continue
        pts.append(cand)
    return np.array(pts)


def decomposition_diagnostics(
    grid: Grid,
    s: float,
    t: float,
    h: Field,
    shift: float | None = None,
    n_exterior: int = 20,
    seed: int = 0,
) -> DecompositionReport:
    """Fit the constant of the pointwise bound on ``(-Delta)^(t/2) G_s h``.

    ``g1`` uses the Riesz potential of order ``2s - t - shift`` (the bound is
    taken as its definition), ``g2`` order ``2s - t`` and ``g3`` order ``s``
    scaled by ``t - s``. Nodes with ``delta > 2h`` are fitted. Exterior
    bounds are checked at random points inside ``B_R`` and beyond ``R``.
    """
    if not 0.0 < s < 1.0:
        raise ValueError(f"s must lie in (0, 1), got {s}")
    if not s <= t < min(1.0, 2 * s):
        raise ValueError(f"need s <= t < min(1, 2s); got s={s}, t={t}")
    gap = 2 * s - t
    if shift is None:
        shift = gap / 2
    if not 0.0 < shift < gap:
        raise ValueError(f"shift must lie in (0, 2s-t) = (0, {gap}); got {shift}")
    u = solve_poisson(grid, s, h)
    absf = abs(h)
    g1 = riesz_potential(absf, gap - shift).values
    g2 = riesz_potential(absf, gap).values
    g3 = (t - s) * riesz_potential(absf, s).values if t > s else np.zeros(grid.n)
    lhs = np.abs(apply_half_laplacian(u, t, grid.nodes))
    delta = grid.delta
    checked = delta > 2 * grid.h
    bound = g1 + np.abs(np.log(delta)) * g2 + delta ** (s - t) * g3
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(bound > 0, lhs / bound, np.where(lhs > 0, np.inf, 0.0))
    C = float(np.max(ratio[checked])) if np.any(checked) else 0.0
    passed = lhs <= C * bound * (1 + 1e-12) + 1e-300

    rng = make_rng(seed)
    R = grid.tail_radius
    med_pts = _exterior_samples(grid, 0.0, R, n_exterior, rng)
    med_lhs = np.abs(apply_half_laplacian(u, t, med_pts))
    weight = np.abs(u.values) / delta ** s
    med_rhs = _point_cell_integrals(grid, med_pts, grid.dim + t - s) @ weight
    far_pts = _exterior_samples(grid, R, 4 * R, n_exterior, rng)
    far_lhs = np.abs(apply_half_laplacian(u, t, far_pts))
    mass = abs(u).integral()
    rad = np.sqrt(np.sum(far_pts ** 2, axis=1))
    far_rhs = 4.0 ** (grid.dim + t) / (1 + rad) ** (grid.dim + t) * mass
    return DecompositionReport(
        s, t, shift, g1, g2, g3, lhs, C, checked, passed,
        med_pts, med_lhs, med_rhs, far_pts, far_lhs, far_rhs,
    )

"""Explicit non-existence thresholds for large ``lambda``.

For the half-Laplacian gradient the threshold comes from testing the
equation with the ``s``-torsion function ``phi`` and pairing the
``t/2``-torsion function ``psi`` with ``(-Delta)^(t/2) u`` through Young's
inequality. For the Stein functional it is an infimum over smooth bumps.

Both arguments go through verbatim on the grid: the discrete operators are
symmetric, Young is applied node-wise, and cell-integrated kernels obey the
same Cauchy-Schwarz splitting as the continuous ones. So the discrete
threshold bounds every discrete solution.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .domain_grid import Field, Grid
from .fracops import half_laplacian, kernel_constants, stein_functional
from .poisson_solver import solve_poisson

__all__ = [
    "NonexistenceBundle",
    "young_constant",
    "torsion_function",
    "boundary_envelope",
    "lambda_starstar_kpz1",
    "Kpz3Estimate",
    "default_bumps",
    "kpz3_constant",
    "lambda_starstar_kpz3",
    "ChainReport",
    "nonexistence_chain_check",
]


def young_constant(q: float) -> float:
    """Sharp ``C`` in ``ab <= a^q + C b^(q/(q-1))``, namely ``(q-1) q^(-q/(q-1))``."""
    if not q > 1:
        raise ValueError(f"q must exceed 1, got {q}")
    return (q - 1.0) * q ** (-q / (q - 1.0))


def torsion_function(grid: Grid, sigma: float) -> Field:
    """Solution of ``(-Delta)^sigma phi = 1`` in the domain, zero outside."""
    if not 0.0 < sigma < 1.0:
        raise ValueError(f"sigma must lie in (0, 1), got {sigma}")
    return solve_poisson(grid, sigma, grid.ones())


def boundary_envelope(phi: Field, sigma: float) -> tuple[float, float]:
    """Range ``(low, high)`` of ``phi / delta^sigma`` over nodes with ``delta > 2h``.

    The certified two-sided constant is ``max(1/low, high)``.
    """
    if not 0.0 < sigma < 1.0:
        raise ValueError(f"sigma must lie in (0, 1), got {sigma}")
    grid = phi.grid
    mask = grid.delta > 2 * grid.h
    if mask.sum() < 10:
        raise ValueError(f"only {int(mask.sum())} nodes with delta > 2h; grid too coarse")
    ratio = phi.values[mask] / grid.delta[mask] ** sigma
    return float(ratio.min()), float(ratio.max())


def _certified(pair: tuple[float, float]) -> float:
    low, high = pair
    return math.inf if low <= 0 else max(1.0 / low, high)


@dataclass
class NonexistenceBundle:
    phi: Field
    psi: Field
    C0: float
    C0_phi: tuple
    C0_psi: tuple
    Cq: float
    lam_starstar: float
    young_integral: float
    f_pairing: float
    s: float
    t: float
    q: float
    mu1: float

    def to_json(self) -> str:
        return json.dumps(
            {
                "s": self.s,
                "t": self.t,
                "q": self.q,
                "mu1": self.mu1,
                "C0": self.C0,
                "C0_phi": list(self.C0_phi),
                "C0_psi": list(self.C0_psi),
                "Cq": self.Cq,
                "Cq_rule": "(q-1) q^(-q/(q-1)), sharp Young constant with weight mu1",
                "lam_starstar": self.lam_starstar,
                "young_integral": self.young_integral,
                "f_pairing": self.f_pairing,
                "h": self.phi.grid.h,
            },
            sort_keys=True,
        )


def lambda_starstar_kpz1(grid: Grid, s: float, t: float, q: float, mu1: float, f: Field) -> NonexistenceBundle:
    """``lambda** = C_q int psi^(q/(q-1)) phi^(-1/(q-1)) / (mu1^(1/(q-1)) int f phi)``.

    ``phi`` is the ``s``-torsion and ``psi`` the ``t/2``-torsion function.
    """
    if not 0.0 < s < 1.0:
        raise ValueError(f"s must lie in (0, 1), got {s}")
    if not 0.0 < t < min(1.0, 2 * s):
        raise ValueError(f"need 0 < t < min(1, 2s); got s={s}, t={t}")
    q_min = 2 * (s + 1) / (t + 2)
    if not q > q_min:
        raise ValueError(f"the threshold needs q > 2(s+1)/(t+2) = {q_min:.6g}; got q={q}")
    if not mu1 > 0:
        raise ValueError(f"mu1 must be positive, got {mu1}")
    if np.any(f.values < 0):
        raise ValueError("f must be non-negative")
    phi = torsion_function(grid, s)
    psi = torsion_function(grid, t / 2)
    if np.any(phi.values <= 0) or np.any(psi.values <= 0):
        raise ArithmeticError("discrete torsion function is not positive")
    pairing = f.inner(phi)
    if not pairing > 0:
        raise ValueError("need f >= 0 not identically zero (int f phi > 0)")
    integrand = psi.values ** (q / (q - 1)) * phi.values ** (-1.0 / (q - 1))
    young = float(np.sum(integrand) * grid.cell_measure)
    Cq = young_constant(q)
    lam = Cq * young / (mu1 ** (1.0 / (q - 1)) * pairing)
    env_phi = boundary_envelope(phi, s)
    env_psi = boundary_envelope(psi, t / 2)
    C0 = max(_certified(env_phi), _certified(env_psi))
    return NonexistenceBundle(phi, psi, C0, env_phi, env_psi, Cq, float(lam), young, float(pairing),
                              s, t, q, mu1)


# ---------------------------------------------------------------------------
# Stein-functional problem


def _bump(grid: Grid, width: float) -> Field:
    r = np.sqrt(np.sum((grid.nodes - grid.domain.incenter) ** 2, axis=1)) / width
    with np.errstate(divide="ignore", over="ignore"):
        v = np.where(r < 1, np.exp(1.0 - 1.0 / np.maximum(1.0 - r * r, 1e-300)), 0.0)
    return Field(grid, v)


def default_bumps(grid: Grid) -> list[Field]:
    """Smooth compactly supported bumps at 8 dyadic widths, centred at the incentre."""
    reach = float(grid.delta.max()) + 0.5 * grid.h - 2 * grid.h
    return [_bump(grid, reach * 2.0 ** (-k)) for k in range(8)]


def kpz3_constant(N: int, s: float, t: float, q: float, mu1: float) -> tuple[float, dict]:
    """Constant multiplying ``int (D_{2s-t} phi)^(q/(q-1))`` in the bump bound.

    Chain: mean value step (factor ``q'``), symmetrisation (factor 2),
    Cauchy-Schwarz between kernels of orders ``t`` and ``2s - t`` (factor
    ``nu = a_{N,s} / sqrt(a_{N,t} a_{N,2s-t})`` for normalised functionals),
    then Young with weight ``mu1``.
    """
    qp = q / (q - 1.0)
    nu = kernel_constants(N, s).a / math.sqrt(kernel_constants(N, t).a * kernel_constants(N, 2 * s - t).a)
    lead = 2.0 * qp * nu
    c = young_constant(q) * mu1 ** (-1.0 / (q - 1.0)) * lead ** qp
    record = {
        "formula": "Y_q * mu1^(-1/(q-1)) * (2 q' nu)^q'",
        "Y_q": young_constant(q),
        "q_prime": qp,
        "nu": nu,
        "value": c,
    }
    return c, record


@dataclass
class Kpz3Estimate:
    lam_starstar: float
    ratios: list
    skipped: list
    constant: dict = field(default_factory=dict)
    label: str = "upper estimate of the infimum"

    def to_json(self) -> str:
        return json.dumps(
            {"lam_starstar": self.lam_starstar, "ratios": self.ratios, "skipped": self.skipped,
             "constant": self.constant, "label": self.label},
            sort_keys=True,
        )


def lambda_starstar_kpz3(
    grid: Grid,
    s: float,
    t: float,
    q: float,
    mu1: float,
    f: Field,
    bump_family: Sequence[Field] | None = None,
) -> Kpz3Estimate:
    """Minimum over the bump family of ``C int (D_{2s-t} phi)^q' / int f phi^q'``."""
    if not 0.0 < t < min(1.0, 2 * s):
        raise ValueError(f"need 0 < t < min(1, 2s); got s={s}, t={t}")
    order = 2 * s - t
    if not 0.0 < order < 1.0:
        raise ValueError(f"the bump functional needs 0 < 2s - t < 1; got {order}")
    if not q > 1:
        raise ValueError(f"q must exceed 1, got {q}")
    if not mu1 > 0:
        raise ValueError(f"mu1 must be positive, got {mu1}")
    bumps = default_bumps(grid) if bump_family is None else list(bump_family)
    if not bumps:
        raise ValueError("empty bump family")
    qp = q / (q - 1.0)
    c, record = kpz3_constant(grid.dim, s, t, q, mu1)
    ratios, skipped = [], []
    for j, phi in enumerate(bumps):
        if np.any(phi.values < 0):
            raise ValueError(f"bump {j} is negative somewhere")
        support = phi.values > 0
        if np.any(grid.delta[support] < 2 * grid.h):
            raise ValueError(f"bump {j} comes within 2h of the boundary")
        den = float(np.sum(f.values * phi.values ** qp) * grid.cell_measure)
        if not den > 0:
            warnings.warn(f"bump {j} has zero pairing with f; skipped", stacklevel=2)
            skipped.append(j)
            ratios.append(None)
            continue
        D = stein_functional(phi, order).values
        num = float(np.sum(D ** qp) * grid.cell_measure)
        ratios.append(c * num / den)
    valid = [x for x in ratios if x is not None]
    if not valid:
        raise ValueError("every bump violates the admissibility condition")
    return Kpz3Estimate(float(min(valid)), ratios, skipped, record)


# ---------------------------------------------------------------------------
# discrete chain of the torsion argument


@dataclass
class ChainReport:
    mass: float
    tested_rhs: float
    mass_gap: float
    psi_pairing: float
    pairing_gap: float
    young_lhs: float
    young_rhs: float
    young_holds: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def nonexistence_chain_check(u: Field, bundle: NonexistenceBundle, spec) -> ChainReport:
    """Evaluate both sides of the three steps of the torsion argument for ``u``.

    ``spec`` supplies ``t, q, lam, mu, f``. Reports
    ``int u - (int mu|g|^q phi + lam int f phi)``, ``int psi g - int u`` and the
    Young inequality ``int psi g <= mu1 int |g|^q phi + C_q mu1^(-1/(q-1)) int psi^q'/phi^(1/(q-1))``
    with ``g = (-Delta)^(t/2) u``.
    """
    t, q = spec.t, spec.q
    if not t < 2 * spec.s:
        raise ValueError(f"need t < 2s; got s={spec.s}, t={t}")
    grid = u.grid
    phi, psi = bundle.phi, bundle.psi
    g = half_laplacian(u, t)
    mass = u.integral()
    power = abs(g).values ** q
    tested = float(np.sum(spec.mu.values * power * phi.values) * grid.cell_measure) + spec.lam * spec.f.inner(phi)
    pair = psi.inner(g)
    mu1 = float(spec.mu.min())
    young_lhs = pair
    young_rhs = mu1 * float(np.sum(power * phi.values) * grid.cell_measure)
    if mu1 > 0:
        young_rhs += bundle.Cq * mu1 ** (-1.0 / (q - 1)) * bundle.young_integral
    else:
        young_rhs = math.inf
    tol = 1e-12 * max(1.0, abs(young_lhs))
    return ChainReport(
        mass, tested, mass - tested, pair, pair - mass,
        young_lhs, young_rhs, bool(young_lhs <= young_rhs + tol),
    )

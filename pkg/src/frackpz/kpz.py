"""Fixed-point machinery for ``(-Delta)^s u = mu |D_t u|^q + lambda f``.

The existence proofs build a ball that the map ``phi -> G_s[mu |D_t phi|^q +
lambda f]`` sends into itself when ``lambda`` is below an explicit threshold.
Here the map is iterated (Picard) from ``u = 0`` and the threshold, ball
radius and auxiliary exponents are computed from measured constants.

A diverging Picard sequence only means no Picard fixed point was found; it
says nothing about existence of a solution.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy import optimize

from .domain_grid import Field, Grid
from .exponents import inv_pos, mbar, ptilde, qbar
from .fracops import assemble_frac_laplacian, half_laplacian, riesz_gradient, stein_functional
from .norms import lebesgue_norm, measure_embedding_constant, stein_norm
from .poisson_solver import (
    GreenOperator,
    cz_sample_sources,
    estimate_cz_constant,
    green_operator,
)

__all__ = [
    "VARIANTS",
    "ProblemSpec",
    "ThresholdBundle",
    "IterationReport",
    "SweepReport",
    "PicardBlowUp",
    "qbar",
    "ptilde",
    "mbar",
    "r_interval",
    "pick_r",
    "pick_eta",
    "thresholds",
    "measure_constants",
    "nonlocal_gradient",
    "picard_step",
    "iterate",
    "ball_norm",
    "test_battery",
    "weak_residual",
    "stein_power_gap",
    "lambda_sweep",
]

log = logging.getLogger(__name__)

VARIANTS = ("half_laplacian", "riesz_gradient", "stein")
DIVERGENCE_LIMIT = 1e8


class PicardBlowUp(ArithmeticError):
    """The nonlinearity overflowed during a Picard step."""


@dataclass(eq=False)
class ProblemSpec:
    """Data of one KPZ problem on a fixed grid.

    ``mu`` and ``f`` may be Fields or scalars (promoted to constant fields).
    The constructor validates the standing assumptions; when only the weaker
    condition ``t < min(1, s(1+1/N))`` holds, ``regime`` is ``"weak"``.
    """

    grid: Grid
    s: float
    t: float
    q: float
    lam: float
    mu: Field | float = 1.0
    f: Field | float = 1.0
    m: float = 4.0
    variant: str = "half_laplacian"
    regime: str = field(init=False, default="A1")

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        for name in ("s", "t"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")
        if not self.q > 1:
            raise ValueError(f"q must exceed 1, got {self.q}")
        if self.lam < 0:
            raise ValueError(f"lambda must be non-negative, got {self.lam}")
        if self.m < 1:
            raise ValueError(f"m must be >= 1, got {self.m}")
        N = self.grid.dim
        strong = min(1.0, self.s * (1.0 + 1.0 / (self.q * N)))
        weak = min(1.0, self.s * (1.0 + 1.0 / N))
        if self.t < strong:
            self.regime = "A1"
        elif self.t < weak:
            self.regime = "weak"
            warnings.warn(
                f"t={self.t} violates t < s(1+1/(qN)) = {strong:.6g} but satisfies "
                f"t < s(1+1/N); running in the weak regime",
                stacklevel=2,
            )
        else:
            raise ValueError(f"need t < min(1, s(1+1/N)) = {weak:.6g}, got t={self.t}")
        if not isinstance(self.mu, Field):
            self.mu = Field(self.grid, np.full(self.grid.n, float(self.mu)))
        if not isinstance(self.f, Field):
            self.f = Field(self.grid, np.full(self.grid.n, float(self.f)))
        if not np.all(np.isfinite(self.mu.values)):
            raise ValueError("mu must be bounded")

    @property
    def N(self) -> int:
        return self.grid.dim

    @property
    def gamma(self) -> float:
        return max(self.t, self.s)

    @property
    def mu_inf(self) -> float:
        return lebesgue_norm(self.mu, np.inf)

    @property
    def mu1(self) -> float:
        return self.mu.min()

    @property
    def mu2(self) -> float:
        return self.mu.max()

    def with_lambda(self, lam: float) -> "ProblemSpec":
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return ProblemSpec(
                self.grid, self.s, self.t, self.q, lam, self.mu, self.f, self.m, self.variant
            )


# ---------------------------------------------------------------------------
# exponents and thresholds


def r_interval(spec: ProblemSpec) -> tuple[float, float, float]:
    """Admissible open interval ``(lo, hi)`` for ``r`` and the datum exponent it was built from.

    For ``m > N/s`` the interval is ``(qm, 1/(t-s)^+)``, otherwise
    ``(qm, mN/(N - ms + mN(gamma-s))^+)``; the Stein variant also needs
    ``r > 2``. When ``m > N/s`` is so large that the interval is empty while
    ``q < qbar`` holds, ``m`` is lowered (``f`` in ``L^m`` implies lower
    integrability on a bounded domain).
    """
    N, s, t, q, m = spec.N, spec.s, spec.t, spec.q, spec.m
    top_q = qbar(m, s, t, N)
    if not q < top_q:
        raise ValueError(f"empty interval for r: q={q} >= qbar(m,s,t)={top_q:.6g}")
    if spec.variant == "stein":
        low_m = mbar(s, t, N)
        if not m > low_m:
            raise ValueError(f"empty interval for r: m={m} <= mbar(s,t)={low_m:.6g}")
    if m > N / s:
        hi = inv_pos(t - s)
        if q * m >= hi:
            m = math.sqrt(N / s * hi / q)
    else:
        hi = m * N * inv_pos(N - m * s + m * N * (spec.gamma - s))
    lo = q * m
    if spec.variant == "stein":
        lo = max(lo, 2.0)
    if not lo < hi:
        raise ValueError(f"empty interval for r: ({lo:.6g}, {hi:.6g})")
    return lo, hi, m


def pick_r(spec: ProblemSpec) -> float:
    """Geometric midpoint of :func:`r_interval`, or twice the lower end when unbounded."""
    lo, hi, _ = r_interval(spec)
    return 2.0 * lo if math.isinf(hi) else math.sqrt(lo * hi)


def pick_eta(spec: ProblemSpec) -> float:
    """Half of the admissible upper bound ``min{q-1, (s - N(gamma-s))/(N(1+gamma-s) - s)}``."""
    N, s, g = spec.N, spec.s, spec.gamma
    bound = min(spec.q - 1.0, (s - N * (g - s)) / (N * (1.0 + (g - s)) - s))
    if not bound > 0:
        raise ValueError(f"no admissible eta: upper bound {bound:.6g} <= 0")
    return 0.5 * bound


@dataclass
class ThresholdBundle:
    r: float
    m_used: float
    gamma: float
    eta: float
    theta: float
    C: float
    k: float
    lam_star: float
    ell: float
    M: float | None
    identity_gap: float
    case: int
    provenance: dict = field(default_factory=dict)

    @property
    def radius(self) -> float:
        """Ball radius ``ell^(1/q)``."""
        return self.ell ** (1.0 / self.provenance.get("q", 2.0))

    def to_dict(self) -> dict:
        return asdict(self)


def _tangency(A: float, q: float) -> float:
    """Maximiser of ``x - A x^q`` on ``(0, inf)``, by bracketing then Newton polish."""
    g = lambda x: 1.0 - q * A * x ** (q - 1.0)
    hi = 1.0
    while g(hi) > 0:
        hi *= 2.0
    lo = hi / 2.0
    while g(lo) < 0:
        lo /= 2.0
    x = optimize.brentq(g, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
    for _ in range(3):
        dg = -q * (q - 1.0) * A * x ** (q - 2.0)
        x -= g(x) / dg
    return x


def thresholds(
    spec: ProblemSpec,
    C: float,
    k: float,
    C1: float | None = None,
    r: float | None = None,
) -> ThresholdBundle:
    """Smallness threshold ``lambda*`` and ball parameter ``ell``.

    ``lambda* = (q-1)/(q ||f||_m) (q (C k)^q ||mu||_inf |Omega|^((r-qm)/(mr)))^(-1/(q-1))``
    and ``ell`` is the unique positive solution of
    ``C (||mu|| |Omega|^((r-qm)/(mr)) k^q ell + lambda* ||f||_m) = ell^(1/q)``,
    which at ``lambda = lambda*`` is the tangency point. ``C1`` is the CZ
    constant for ``m = 1`` used by the ``M`` cap when ``m <= N/s``.
    """
    if not (C > 0 and k > 0):
        raise ValueError("measured constants must be positive")
    q = spec.q
    _, _, m = r_interval(spec)
    r = pick_r(spec) if r is None else float(r)
    omega = spec.grid.total_measure
    f_m = lebesgue_norm(spec.f, m)
    if f_m == 0:
        raise ValueError("lambda* needs ||f||_m > 0")
    mu_inf = spec.mu_inf
    expo = (r - q * m) / (m * r)
    A = C * mu_inf * omega ** expo * k ** q
    if A == 0:
        raise ValueError("lambda* needs ||mu||_inf > 0")
    lam_star = (q - 1.0) / (q * f_m) * (q * (C * k) ** q * mu_inf * omega ** expo) ** (-1.0 / (q - 1.0))
    x = _tangency(A, q)
    ell = x ** q
    lhs = C * (mu_inf * omega ** expo * k ** q * ell + lam_star * f_m)
    gap = abs(lhs - ell ** (1.0 / q)) / ell ** (1.0 / q)
    eta = pick_eta(spec)
    theta = (1.0 / q - 1.0 / r) / (1.0 / (1.0 + eta) - 1.0 / r)
    case = 1 if spec.m > spec.N / spec.s else 2
    M = None
    if case == 2:
        C1 = C if C1 is None else C1
        M = C1 * (mu_inf * omega ** ((r - q) / r) * k ** q * ell + lam_star * lebesgue_norm(spec.f, 1))
    prov = {"q": q, "C_source": "sampled CZ estimate", "k_source": "measured embedding ratio",
            "omega": omega, "f_m": f_m, "mu_inf": mu_inf}
    return ThresholdBundle(r, m, spec.gamma, eta, theta, float(C), float(k), float(lam_star),
                           float(ell), M, float(gap), case, prov)


def measure_constants(spec: ProblemSpec, samples: int = 50, seed: int = 0) -> tuple[float, float, dict]:
    """Measure ``C`` (CZ at order gamma, exponent r) and ``k`` (embedding t into gamma at r)."""
    r = pick_r(spec)
    _, _, m = r_interval(spec)
    g = spec.gamma
    cz = estimate_cz_constant(spec.grid, spec.s, g, r, m, samples=samples, seed=seed)
    if spec.t < g:
        G = green_operator(spec.grid, spec.s)
        fields = [G(h) for h in cz_sample_sources(spec.grid, samples, seed)]
        k = measure_embedding_constant(fields, spec.t, g, r)
    else:
        k = 1.0
    prov = {"cz": json.loads(cz.to_json()), "k": {"sigma": spec.t, "sigma_prime": g, "p": r,
                                                   "samples": samples, "seed": seed}}
    return cz.C, k, prov


# ---------------------------------------------------------------------------
# Picard iteration


def nonlocal_gradient(u: Field, t: float, variant: str) -> Field:
    """Scalar ``|D_t u|`` for the chosen nonlocal gradient."""
    if variant == "half_laplacian":
        return abs(half_laplacian(u, t))
    if variant == "riesz_gradient":
        return riesz_gradient(u, t).magnitude()
    if variant == "stein":
        return stein_functional(u, t)
    raise ValueError(f"unknown variant {variant!r}")


def _source(spec: ProblemSpec, u: Field) -> Field:
    g = nonlocal_gradient(u, spec.t, spec.variant).values
    with np.errstate(over="ignore", invalid="ignore"):
        vals = spec.mu.values * g ** spec.q + spec.lam * spec.f.values
    if not np.all(np.isfinite(vals)):
        raise PicardBlowUp("non-finite |D_t u|^q")
    return Field(spec.grid, vals)


def picard_step(spec: ProblemSpec, phi: Field, green: GreenOperator) -> Field:
    """One application of ``phi -> G_s[mu |D_t phi|^q + lambda f]``."""
    if green.grid is not spec.grid or green.s != spec.s:
        raise ValueError("green operator must be assembled at order s on the problem grid")
    return green(_source(spec, phi))


def ball_norm(spec: ProblemSpec, u: Field, r: float) -> tuple[float, str]:
    """Stein proxy of the ``L_0^{gamma,r}`` norm used for ball membership.

    The Stein variant with ``t >= s`` drops the Lebesgue addend.
    """
    with_lp = not (spec.variant == "stein" and spec.t >= spec.s)
    val = stein_norm(u, spec.gamma, r, lebesgue_part=with_lp)
    return val, "lebesgue+stein" if with_lp else "stein"


@dataclass
class IterationReport:
    converged: bool = False
    iterations: int = 0
    residual: float | None = None
    diverged: bool = False
    blowup_index: int | None = None
    linf_trace: list = field(default_factory=list)
    proxy_trace: list = field(default_factory=list)
    ball_trace: list = field(default_factory=list)
    proxy_kind: str = ""
    ball_radius: float | None = None

    @property
    def stayed_in_ball(self) -> bool:
        return all(self.ball_trace)

    def to_dict(self) -> dict:
        return asdict(self)


def iterate(
    spec: ProblemSpec,
    green: GreenOperator,
    u0: Field | None = None,
    max_iter: int = 200,
    tol: float = 1e-10,
    bundle: ThresholdBundle | None = None,
    ball_slack: float = 0.05,
    track_norms: bool = True,
) -> tuple[Field, IterationReport]:
    """Picard iteration from ``u0`` (default zero).

    Stops when ``||u_{k+1} - u_k||_inf <= tol (1 + ||u_k||_inf)``; declares
    divergence when ``||u_k||_inf`` exceeds 1e8 or turns non-finite. With a
    ``bundle`` every iterate's ball-proxy norm is compared against
    ``ell^(1/q) (1 + ball_slack)``.
    """
    if max_iter < 1 or not tol > 0:
        raise ValueError("need max_iter >= 1 and tol > 0")
    u = spec.grid.zeros() if u0 is None else u0
    rep = IterationReport()
    r = bundle.r if bundle is not None else None
    if bundle is not None:
        rep.ball_radius = bundle.ell ** (1.0 / spec.q)
    for k in range(1, max_iter + 1):
        try:
            nxt = picard_step(spec, u, green)
        except PicardBlowUp:
            rep.diverged, rep.blowup_index, rep.iterations = True, k, k - 1
            return u, rep
        linf = lebesgue_norm(nxt, np.inf)
        rep.iterations = k
        if not np.isfinite(linf) or linf > DIVERGENCE_LIMIT:
            rep.diverged, rep.blowup_index = True, k
            rep.linf_trace.append(float(linf))
            return nxt, rep
        rep.linf_trace.append(linf)
        if track_norms and r is not None:
            val, kind = ball_norm(spec, nxt, r)
            rep.proxy_trace.append(val)
            rep.proxy_kind = kind
            rep.ball_trace.append(bool(val <= rep.ball_radius * (1 + ball_slack)))
        step = lebesgue_norm(nxt - u, np.inf)
        done = step <= tol * (1.0 + lebesgue_norm(u, np.inf))
        u = nxt
        if done:
            rep.converged = True
            rep.residual = weak_residual(u, spec, green)
            return u, rep
    return u, rep


# ---------------------------------------------------------------------------
# weak formulation


def test_battery(grid: Grid, s: float) -> list[Field]:
    """Ten test functions vanishing outside the domain.

    The s-torsion function, boundary-distance powers ``delta^beta`` and
    centred cosine bumps of decreasing width.
    """
    key = ("battery", float(s))
    hit = grid._cache.get(key)
    if hit is not None:
        return hit
    out = [green_operator(grid, s)(grid.ones())]
    for beta in (0.25, 0.5, 0.75, 1.0):
        out.append(Field(grid, grid.delta ** beta))
    c = grid.domain.incenter
    inr = float(grid.delta.max())
    rad = np.sqrt(np.sum((grid.nodes - c) ** 2, axis=1))
    for frac in (0.9, 0.7, 0.5, 0.35, 0.2):
        w = frac * inr
        out.append(Field(grid, np.where(rad < w, 0.5 * (1 + np.cos(np.pi * rad / w)), 0.0)))
    grid._cache[key] = out
    return out


def weak_residual(u: Field, spec: ProblemSpec, green: GreenOperator) -> float:
    """``max_j |<u, (-Delta)^s phi_j> - <mu |D_t u|^q + lambda f, phi_j>| / ||phi_j||_inf``."""
    M = assemble_frac_laplacian(spec.grid, spec.s)
    rhs = _source(spec, u)
    worst = 0.0
    for phi in test_battery(spec.grid, spec.s):
        lhs = u.inner(M @ phi)
        worst = max(worst, abs(lhs - rhs.inner(phi)) / lebesgue_norm(phi, np.inf))
    return float(worst)


def stein_power_gap(phi1: Field, phi2: Field, t: float, alpha: float) -> float:
    """``int |(D_t phi1)^alpha - (D_t phi2)^alpha|`` over the domain."""
    if not alpha > 1:
        raise ValueError(f"alpha must exceed 1, got {alpha}")
    d1 = stein_functional(phi1, t).values
    d2 = stein_functional(phi2, t).values
    return float(np.sum(np.abs(d1 ** alpha - d2 ** alpha)) * phi1.grid.cell_measure)


# ---------------------------------------------------------------------------
# sweeps


@dataclass
class SweepReport:
    lambdas: list
    converged: list
    iterations: list
    final_norm: list
    residual: list
    largest_converged: float | None
    smallest_diverged: float | None
    lam_star: float | None = None
    lam_starstar: float | None = None
    monotone: bool = True
    meta: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["lambda", "converged", "iterations", "final_norm", "residual"])
        for row in zip(self.lambdas, self.converged, self.iterations, self.final_norm, self.residual):
            lam, conv, it, nrm, res = row
            w.writerow([repr(float(lam)), int(conv), it, repr(float(nrm)),
                        "" if res is None else repr(float(res))])
        return buf.getvalue()

    def summary(self) -> dict:
        return {
            "largest_converged": self.largest_converged,
            "smallest_diverged": self.smallest_diverged,
            "lam_star": self.lam_star,
            "lam_starstar": self.lam_starstar,
            "monotone_linf": self.monotone,
            **self.meta,
        }


def lambda_sweep(
    spec_template: ProblemSpec,
    lambdas: Sequence[float],
    green: GreenOperator,
    max_iter: int = 200,
    tol: float = 1e-10,
    lam_star: float | None = None,
    lam_starstar: float | None = None,
) -> SweepReport:
    """Run the Picard iteration for each ``lambda`` and bracket the empirical blow-up."""
    lambdas = [float(x) for x in lambdas]
    if not lambdas:
        raise ValueError("empty lambda list")
    if any(b < a for a, b in zip(lambdas, lambdas[1:])):
        raise ValueError("lambda values must be sorted ascending")
    conv, its, norms, res = [], [], [], []
    for lam in lambdas:
        u, rep = iterate(spec_template.with_lambda(lam), green, max_iter=max_iter, tol=tol,
                         track_norms=False)
        conv.append(rep.converged)
        its.append(rep.iterations)
        norms.append(rep.linf_trace[-1] if rep.linf_trace else 0.0)
        res.append(rep.residual)
    ok = [lam for lam, c in zip(lambdas, conv) if c]
    bad = [lam for lam, c in zip(lambdas, conv) if not c]
    prefix = []
    for c, nrm in zip(conv, norms):
        if not c:
            break
        prefix.append(nrm)
    monotone = all(b >= a - 1e-12 * max(1.0, abs(a)) for a, b in zip(prefix, prefix[1:]))
    if not monotone:
        log.warning("converged L-inf norms are not monotone in lambda")
    return SweepReport(
        lambdas, conv, its, norms, res,
        max(ok) if ok else None, min(bad) if bad else None,
        lam_star, lam_starstar, monotone,
    )

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

import oracles
from conftest import interval_grid
from frackpz.domain_grid import Domain, Field, make_grid
from frackpz.fracops import _complement_integral, cell_weights
from frackpz.norms import (
    NormReport,
    exterior_tail,
    gagliardo_seminorm,
    holder_seminorm,
    interpolation_defect,
    interpolation_theta,
    lebesgue_norm,
    measure_embedding_constant,
    sobolev_norm,
    stein_exterior_norm,
    stein_norm,
)
from frackpz.poisson_solver import cz_sample_sources, green_operator, solve_poisson

# torsion field (s=1/2), Stein norm with sigma=1/2, p=2, n=512; n=1024 gives 2.40893
G_SN = 2.4103890930877383


def test_lebesgue_examples():
    sq = make_grid(Domain.square((0, 0), 1), 1 / 16)
    assert lebesgue_norm(sq.ones(), 3) == pytest.approx(1.0)
    assert lebesgue_norm(sq.zeros(), 2) == 0
    assert lebesgue_norm(np.array([1.0, 2.0]), 2, cell_measure=0.5) == pytest.approx(np.sqrt(2.5))
    with pytest.raises(ValueError):
        lebesgue_norm(sq.ones(), 0.5)
    assert lebesgue_norm(Field(sq, -3 * np.ones(sq.n)), np.inf) == 3


def test_lebesgue_large_exponent_finite(g256):
    u = Field(g256, np.full(g256.n, 1e30))
    assert lebesgue_norm(u, 64) == pytest.approx(1e30 * 2 ** (1 / 64))


@pytest.mark.parametrize("n", [3, 4, 5])
@pytest.mark.parametrize("sigma,p", [(0.3, 2.0), (0.6, 1.5), (0.45, 4.0)])
def test_gagliardo_matches_pair_sum(n, sigma, p):
    g = interval_grid(n)
    u = np.array([1.0, -0.5, 0.25, 2.0, -1.0])[:n]
    got = gagliardo_seminorm(Field(g, u), sigma, p)
    assert got == pytest.approx(oracles.gagliardo(u, g.x, g.h, -1, 1, sigma, p), rel=1e-12)


def test_gagliardo_large_order_no_cancellation():
    # sigma p / 2 = 4.8: subtracting row sums from the complement integral loses every digit here
    g = interval_grid(128)
    u = g.evaluate(lambda x: np.cos(np.pi * x / 2))
    n5 = interval_grid(5)
    v = np.array([1.0, -0.5, 0.25, 2.0, -1.0])
    assert gagliardo_seminorm(Field(n5, v), 0.6, 16) == pytest.approx(
        oracles.gagliardo(v, n5.x, n5.h, -1, 1, 0.6, 16), rel=1e-12)
    assert np.isfinite(gagliardo_seminorm(u, 0.6, 16))


def test_exterior_tail_square_matches_subtraction():
    # square cells tile the domain, so both routes compute the same integral at low order
    g = make_grid(Domain.square((0, 0), 1), 1 / 16)
    old = _complement_integral(g, 0.3) - cell_weights(g, "singular", 0.3).sum(axis=1)
    np.testing.assert_allclose(exterior_tail(g, 0.3), old, rtol=1e-5)


def test_exterior_tail_disk_quadrature():
    g = make_grid(Domain.disk((0, 0), 1), 1 / 32)
    centre = np.argmin(np.hypot(*g.nodes.T))
    near = np.argmin(g.delta)
    tail = exterior_tail(g, 2.0)

    def ref(i):
        x = g.nodes[i]

        def rho(t):
            b = x @ (np.cos(t), np.sin(t))
            return -b + np.sqrt(b * b - x @ x + 1.0)

        return integrate.quad(lambda t: rho(t) ** -4.0, 0, 2 * np.pi, limit=400, epsabs=0, epsrel=1e-12)[0] / 4.0

    for i in (centre, near):
        assert tail[i] == pytest.approx(ref(i), rel=1e-9)


def test_gagliardo_zero_and_homogeneity(g256, rng):
    assert gagliardo_seminorm(g256.zeros(), 0.4, 2) == 0
    u = Field(g256, rng.normal(size=g256.n))
    assert gagliardo_seminorm(-2.5 * u, 0.4, 3) == pytest.approx(2.5 * gagliardo_seminorm(u, 0.4, 3), rel=1e-14)
    with pytest.raises(ValueError):
        gagliardo_seminorm(u, 1.0, 2)
    with pytest.raises(ValueError):
        gagliardo_seminorm(u, 0.5, 0.9)


def test_stein_norm_golden_and_drift():
    vals = []
    for n in (512, 1024):
        g = interval_grid(n)
        vals.append(stein_norm(solve_poisson(g, 0.5, g.ones()), 0.5, 2))
    assert vals[0] == pytest.approx(G_SN, rel=1e-10)
    assert abs(vals[1] / vals[0] - 1) < 0.1


def test_stein_norm_axioms(g256, rng):
    assert stein_norm(g256.zeros(), 0.5, 2) == 0
    for _ in range(50):
        u = Field(g256, rng.normal(size=g256.n))
        v = Field(g256, rng.normal(size=g256.n))
        lhs = stein_norm(u + v, 0.4, 3)
        rhs = stein_norm(u, 0.4, 3) + stein_norm(v, 0.4, 3)
        assert lhs <= rhs * (1 + 1e-12)
    u = Field(g256, rng.normal(size=g256.n))
    assert stein_norm(-2 * u, 0.4, 3) == pytest.approx(2 * stein_norm(u, 0.4, 3), rel=1e-12)


def test_stein_norm_range(g256):
    # p must exceed 2N/(N + 2 sigma) = 1 for N=1, sigma=1/2
    with pytest.raises(ValueError, match="2N/"):
        stein_norm(g256.ones(), 0.5, 1.0)


def test_stein_exterior_radius_convergence(g256):
    u = solve_poisson(g256, 0.5, g256.ones())
    a = stein_exterior_norm(u, 0.5, 3, radius=4.0)
    b = stein_exterior_norm(u, 0.5, 3, radius=8.0)
    assert abs(a / b - 1) < 1e-3


def test_holder_examples():
    g = interval_grid(128)
    assert holder_seminorm(g.ones(), 0.5) == 0
    assert holder_seminorm(g.evaluate(lambda x: x), 1.0) == pytest.approx(1.0)
    vals = []
    for n in (512, 1024):
        gg = interval_grid(n)
        vals.append(holder_seminorm(solve_poisson(gg, 0.5, gg.ones()), 0.5))
    assert abs(vals[1] / vals[0] - 1) < 0.1


def test_interpolation_defect(g256):
    rng = np.random.Generator(np.random.Philox(99))
    assert interpolation_defect(g256.zeros(), 2, 0.5, 4) == 0
    unit = make_grid(Domain.square((0, 0), 1), 1 / 8)
    assert interpolation_defect(unit.ones(), 2, 0.5, 4) == pytest.approx(0.0, abs=1e-15)
    for _ in range(1000):
        q = rng.uniform(1.6, 4)
        eta = rng.uniform(0.05, q - 1.05)
        r = q + rng.uniform(0.1, 10)
        g = Field(g256, rng.standard_cauchy(size=g256.n))
        assert interpolation_defect(g, q, eta, r) <= 1e-12 * lebesgue_norm(g, q)
    with pytest.raises(ValueError):
        interpolation_defect(unit.ones(), 2, 1.5, 4)


def test_interpolation_theta():
    th = interpolation_theta(2.0, 0.5, 4.0)
    assert 1 / 2.0 == pytest.approx(th / 1.5 + (1 - th) / 4.0)


def test_embedding_constant_stable():
    ks = []
    for n in (128, 256):
        g = interval_grid(n)
        G = green_operator(g, 0.6)
        fields = [G(h) for h in cz_sample_sources(g, 10, 0)]
        ks.append(measure_embedding_constant(fields, 0.4, 0.6, 4))
    assert ks[0] >= 1
    assert abs(ks[1] / ks[0] - 1) < 0.25
    with pytest.raises(ValueError):
        measure_embedding_constant([], 0.7, 0.6, 2)


def test_sobolev_norm_combines(g256, rng):
    u = Field(g256, rng.normal(size=g256.n))
    expect = (lebesgue_norm(u, 2) ** 2 + gagliardo_seminorm(u, 0.3, 2) ** 2) ** 0.5
    assert sobolev_norm(u, 0.3, 2) == pytest.approx(expect)


def test_norm_report_json():
    r = NormReport("stein", {"sigma": 0.5, "p": 2}, 1.5, 0.01)
    assert json.loads(r.to_json())["value"] == 1.5


@settings(max_examples=30, deadline=None)
@given(
    vals=st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=8, max_size=8),
    p=st.floats(1, 20),
    c=st.floats(-100, 100),
)
def test_lebesgue_norm_axioms(vals, p, c):
    g = interval_grid(8)
    u = Field(g, np.array(vals))
    n = lebesgue_norm(u, p)
    assert n >= 0
    assert lebesgue_norm(c * u, p) == pytest.approx(abs(c) * n, rel=1e-12, abs=1e-300)
    assert (n == 0) == (not np.any(u.values))

import json
import logging
import math

import numpy as np
import pytest

from conftest import interval_grid
from frackpz import kpz
from frackpz.domain_grid import Domain, Field, make_grid
from frackpz.exponents import inv_pos, mbar, ptilde, qbar
from frackpz.kpz import (
    ProblemSpec,
    iterate,
    lambda_sweep,
    measure_constants,
    nonlocal_gradient,
    picard_step,
    pick_eta,
    pick_r,
    r_interval,
    stein_power_gap,
    thresholds,
    weak_residual,
)
from frackpz.norms import lebesgue_norm
from frackpz.poisson_solver import green_operator, make_rng, solve_poisson

# one Picard step from the s=1/2 torsion, s=t=1/2, q=2, lambda=0.1, n=512
G_PICARD = {0: 0.04656534053863863, 128: 0.709010483075658, 255: 0.8828232127552287,
            511: 0.04656534053863878}
G_PICARD_L2 = 0.9588391715142199


# -- exponents -------------------------------------------------------------------


def test_exponent_examples():
    assert qbar(3, 0.8, 0.5, 2) == math.inf
    assert qbar(5, 0.5, 0.6, 2) == pytest.approx(2.5)
    assert qbar(2, 0.5, 0.5, 2) == pytest.approx(2.0)
    assert ptilde(1, 0.5, 0.55, 2) == pytest.approx(1.25)
    assert mbar(0.5, 0.6, 2) == pytest.approx(1.5384615384615383)
    assert inv_pos(0.0) == math.inf and inv_pos(-1) == math.inf


def test_mbar_below_critical():
    for s in np.linspace(0.1, 0.9, 9):
        for N in (1, 2):
            for t in np.linspace(0.05, min(0.99, s * (1 + 1 / N) - 1e-3), 7):
                assert mbar(s, t, N) < N / s


def test_qbar_monotone_in_t():
    for m in (1.5, 2.0, 3.0, 6.0):
        ts = np.linspace(0.3, 0.7, 41)
        vals = [qbar(m, 0.5, t, 2) for t in ts]
        assert all(b <= a for a, b in zip(vals, vals[1:]))


def test_exponents_reject_bad_orders():
    with pytest.raises(ValueError):
        qbar(2, 1.0, 0.5, 1)
    with pytest.raises(ValueError):
        ptilde(2, 0.6, 0.5, 1)
    with pytest.raises(ValueError):
        qbar(0.5, 0.5, 0.5, 1)


# -- problem spec and r ------------------------------------------------------------


@pytest.fixture(scope="module")
def sq8():
    return make_grid(Domain.square((0, 0), 1), 1 / 8)


def test_pick_r_example(sq8):
    spec = ProblemSpec(sq8, 0.8, 0.8, 2, 0.1, m=3)
    assert r_interval(spec) == (6, math.inf, 3)
    assert pick_r(spec) == 12


def test_stein_lower_bound(g256):
    spec = ProblemSpec(g256, 0.5, 0.5, 1.2, 0.1, m=1.5, variant="stein")
    lo, hi, _ = r_interval(spec)
    assert lo == 2.0 and hi > lo


def test_empty_interval_errors(g256, sq8):
    with pytest.raises(ValueError, match="qbar"):
        r_interval(ProblemSpec(sq8, 0.5, 0.5, 2.5, 0.1, m=2))
    with pytest.raises(ValueError, match="mbar"):
        r_interval(ProblemSpec(g256, 0.5, 0.5, 1.1, 0.1, m=1.0, variant="stein"))


def test_large_m_is_reduced(g256):
    spec = ProblemSpec(g256, 0.6, 0.65, 2, 0.1, m=50)
    lo, hi, m = r_interval(spec)
    assert m < 50 and lo < hi


def test_spec_validation(g256):
    with pytest.raises(ValueError):
        ProblemSpec(g256, 0.5, 0.5, 2, 0.1, variant="other")
    with pytest.raises(ValueError):
        ProblemSpec(g256, 0.5, 0.5, 1.0, 0.1)
    with pytest.raises(ValueError):
        ProblemSpec(g256, 0.5, 0.5, 2, -1)
    with pytest.raises(ValueError):
        ProblemSpec(g256, 0.3, 0.7, 2, 0.1)  # s(1+1/N) = 0.6
    with pytest.warns(UserWarning, match="weak regime"):
        spec = ProblemSpec(g256, 0.5, 0.8, 2, 0.1)
    assert spec.regime == "weak"
    assert ProblemSpec(g256, 0.5, 0.5, 2, 0.1).regime == "A1"


def test_pick_eta(g256):
    spec = ProblemSpec(g256, 0.6, 0.5, 2, 0.1)
    assert 0 < pick_eta(spec) < 1


# -- thresholds -----------------------------------------------------------------


def test_thresholds_all_ones(sq8):
    spec = ProblemSpec(sq8, 0.8, 0.8, 2, 0.1, m=3)
    b = thresholds(spec, 1.0, 1.0)
    assert b.lam_star == pytest.approx(0.25, rel=1e-14)
    assert b.ell == pytest.approx(0.25, rel=1e-14)
    assert b.identity_gap <= 1e-10
    assert b.case == 1 and b.M is None
    assert b.radius == pytest.approx(0.5)
    json.dumps(b.to_dict())


@pytest.mark.parametrize("q", [1.3, 2.0, 3.0])
def test_thresholds_homogeneity(q):
    g = interval_grid(64)
    spec = ProblemSpec(g, 0.6, 0.5, q, 0.1, m=4)
    base = thresholds(spec, 1.7, 1.2)
    assert base.identity_gap <= 1e-10
    twice_f = thresholds(ProblemSpec(g, 0.6, 0.5, q, 0.1, f=2.0, m=4), 1.7, 1.2)
    assert twice_f.lam_star == pytest.approx(base.lam_star / 2, rel=1e-12)
    c = 3.0
    scaled_mu = thresholds(ProblemSpec(g, 0.6, 0.5, q, 0.1, mu=c, m=4), 1.7, 1.2)
    assert scaled_mu.lam_star == pytest.approx(base.lam_star * c ** (-1 / (q - 1)), rel=1e-12)
    assert scaled_mu.ell == pytest.approx(base.ell * c ** (-q / (q - 1)), rel=1e-12)


def test_thresholds_case2_cap(g256):
    spec = ProblemSpec(g256, 0.6, 0.5, 1.2, 0.1, m=1.2)
    b = thresholds(spec, 1.5, 1.0)
    assert b.case == 2 and b.M > 0


def test_thresholds_reject_nonpositive(g256):
    spec = ProblemSpec(g256, 0.6, 0.5, 2, 0.1)
    with pytest.raises(ValueError):
        thresholds(spec, 0.0, 1.0)
    with pytest.raises(ValueError):
        thresholds(ProblemSpec(g256, 0.6, 0.5, 2, 0.1, f=0.0), 1.0, 1.0)


# -- Picard map ---------------------------------------------------------------------


def test_picard_step_golden(g512):
    spec = ProblemSpec(g512, 0.5, 0.5, 2, 0.1)
    G = green_operator(g512, 0.5)
    u = picard_step(spec, G(g512.ones()), G)
    for i, v in G_PICARD.items():
        assert u.values[i] == pytest.approx(v, rel=1e-10)
    assert lebesgue_norm(u, 2) == pytest.approx(G_PICARD_L2, rel=1e-10)


def test_picard_step_trivial(g256):
    G = green_operator(g256, 0.5)
    z = g256.zeros()
    assert np.all(picard_step(ProblemSpec(g256, 0.5, 0.5, 2, 0.0), z, G).values == 0)
    torsion = G(g256.ones())
    assert np.all(picard_step(ProblemSpec(g256, 0.5, 0.5, 2, 0.0, mu=0.0), torsion, G).values == 0)
    with pytest.raises(ValueError):
        picard_step(ProblemSpec(g256, 0.5, 0.5, 2, 0.1), z, green_operator(g256, 0.6))


@pytest.mark.parametrize("variant", kpz.VARIANTS)
def test_nonlocal_gradient_nonnegative(g256, variant):
    u = solve_poisson(g256, 0.5, g256.ones())
    assert nonlocal_gradient(u, 0.4, variant).min() >= 0


def test_iterate_lambda_zero(g256):
    spec = ProblemSpec(g256, 0.5, 0.5, 2, 0.0)
    u, rep = iterate(spec, green_operator(g256, 0.5))
    assert rep.converged and rep.iterations <= 2
    assert np.all(u.values == 0)


def test_iterate_mu_zero(g256):
    spec = ProblemSpec(g256, 0.5, 0.5, 2, 0.3, mu=0.0)
    G = green_operator(g256, 0.5)
    u, rep = iterate(spec, G)
    assert rep.converged and rep.iterations == 2
    np.testing.assert_array_equal(u.values, G(0.3 * g256.ones()).values)


def test_iterate_blows_up_for_large_lambda(g256):
    spec = ProblemSpec(g256, 0.5, 0.5, 2, 50.0)
    u, rep = iterate(spec, green_operator(g256, 0.5), max_iter=100)
    assert rep.diverged and not rep.converged
    assert rep.blowup_index is not None


@pytest.fixture(scope="module")
def reference_run(g512):
    spec0 = ProblemSpec(g512, 0.6, 0.5, 2, 0.0, m=4)
    C, k, _ = measure_constants(spec0, samples=20, seed=0)
    bundle = thresholds(spec0, C, k)
    spec = spec0.with_lambda(0.5 * bundle.lam_star)
    G = green_operator(g512, 0.6)
    u, rep = iterate(spec, G, tol=1e-10, bundle=bundle)
    return spec, G, bundle, u, rep


def test_iterate_reference(reference_run):
    spec, G, bundle, u, rep = reference_run
    assert rep.converged
    assert rep.residual <= 10 * 1e-10 * max(1.0, lebesgue_norm(u, np.inf))
    assert rep.stayed_in_ball
    lower = G(spec.lam * spec.f).values
    assert np.all(u.values >= lower - 1e-10)
    assert all(b >= a - 1e-14 for a, b in zip(rep.linf_trace, rep.linf_trace[1:]))
    json.dumps(rep.to_dict())


def test_weak_residual(g256):
    spec = ProblemSpec(g256, 0.5, 0.5, 2, 0.2)
    G = green_operator(g256, 0.5)
    z = g256.zeros()
    battery = kpz.test_battery(g256, 0.5)
    assert len(battery) == 10
    expect = max(abs(0.2 * g256.ones().inner(p)) / lebesgue_norm(p, np.inf) for p in battery)
    assert weak_residual(z, spec, G) == pytest.approx(expect, rel=1e-12)


# -- Stein power gap --------------------------------------------------------------


def test_stein_power_gap(g256):
    t = 0.4
    z = g256.zeros()
    u = solve_poisson(g256, 0.5, g256.ones())
    assert stein_power_gap(z, z, t, 2.0) == 0
    from frackpz.fracops import stein_functional

    assert stein_power_gap(u, z, t, 1.5) == pytest.approx(
        (stein_functional(u, t) ** 1.5).integral(), rel=1e-12)
    with pytest.raises(ValueError):
        stein_power_gap(u, z, t, 1.0)
    rng = make_rng(11)
    omega = g256.total_measure
    for _ in range(100):
        a = Field(g256, rng.normal(size=g256.n))
        b = Field(g256, rng.normal(size=g256.n))
        alpha = rng.uniform(1.1, 4)
        hi = max(alpha, 2.0)
        d1, d2 = stein_functional(a, t), stein_functional(b, t)
        C = alpha * (lebesgue_norm(d1, alpha) ** (alpha - 1) + lebesgue_norm(d2, alpha) ** (alpha - 1))
        C *= omega ** (1 / alpha - 1 / hi)
        bound = C * lebesgue_norm(stein_functional(a - b, t), hi)
        assert stein_power_gap(a, b, t, alpha) <= bound * (1 + 1e-12)


# -- sweeps ----------------------------------------------------------------------


def test_lambda_sweep_monotone(g256):
    spec = ProblemSpec(g256, 0.5, 0.5, 2, 0.0)
    rep = lambda_sweep(spec, [0.0, 0.05, 0.1, 0.2, 0.3], green_operator(g256, 0.5), lam_star=0.01)
    assert all(rep.converged)
    assert rep.final_norm[0] == 0
    assert rep.monotone
    assert rep.largest_converged == 0.3 and rep.smallest_diverged is None
    lines = rep.to_csv().splitlines()
    assert lines[0] == "lambda,converged,iterations,final_norm,residual" and len(lines) == 6
    assert rep.summary()["lam_star"] == 0.01


def test_lambda_sweep_brackets_blowup(g256):
    spec = ProblemSpec(g256, 0.5, 0.5, 2, 0.0)
    rep = lambda_sweep(spec, [0.1, 5.0, 50.0], green_operator(g256, 0.5), max_iter=100)
    assert rep.largest_converged == 0.1
    assert rep.smallest_diverged == 5.0


def test_lambda_sweep_input_checks(g256):
    spec = ProblemSpec(g256, 0.5, 0.5, 2, 0.0)
    G = green_operator(g256, 0.5)
    with pytest.raises(ValueError):
        lambda_sweep(spec, [], G)
    with pytest.raises(ValueError):
        lambda_sweep(spec, [0.2, 0.1], G)


def test_weak_regime_sweep_warns(g256, caplog):
    with pytest.warns(UserWarning):
        spec = ProblemSpec(g256, 0.5, 0.8, 2, 0.0)
    with caplog.at_level(logging.WARNING):
        rep = lambda_sweep(spec, [0.0, 0.01], green_operator(g256, 0.5))
    assert rep.converged[0]

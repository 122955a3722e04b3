import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from frackpz.domain_grid import Domain, Field, boundary_distance, make_grid


def test_interval_four_nodes():
    g = make_grid(Domain.interval(-1, 1), 0.5)
    assert g.n == 4
    np.testing.assert_allclose(np.sort(g.x), [-0.75, -0.25, 0.25, 0.75])
    np.testing.assert_allclose(g.delta, 1 - np.abs(g.x))


def test_disk_too_coarse():
    with pytest.raises(ValueError):
        make_grid(Domain.disk((0, 0), 1), 2.5)


def test_square_fills_exactly():
    g = make_grid(Domain.square((0, 0), 1), 1 / 64)
    assert g.n == 4096
    assert g.total_measure == 1.0


@pytest.mark.parametrize("h", [0, -0.1])
def test_bad_spacing(h):
    with pytest.raises(ValueError):
        make_grid(Domain.interval(0, 1), h)


@pytest.mark.parametrize(
    "kwargs",
    [dict(shape="interval", a=1, b=0), dict(shape="disk", center=(0, 0), radius=0),
     dict(shape="square", corner=(0, 0), side=-1)],
)
def test_degenerate_domains(kwargs):
    with pytest.raises(ValueError):
        Domain.from_config(kwargs)


def test_config_round_trip_and_unknown_keys():
    d = Domain.disk((0.5, -1.0), 2.0)
    assert Domain.from_config(d.to_config()) == d
    with pytest.raises(ValueError):
        Domain.from_config({"shape": "interval", "a": 0, "b": 1, "c": 2})


def test_boundary_distance_examples():
    assert boundary_distance(Domain.interval(-1, 1), 0.0) == pytest.approx(1.0)
    assert boundary_distance(Domain.disk((0, 0), 1), (0.6, 0)) == pytest.approx(0.4)
    assert boundary_distance(Domain.square((0, 0), 1), (0.5, 0.125)) == pytest.approx(0.125)
    # exterior points get their absolute distance
    assert boundary_distance(Domain.disk((0, 0), 1), (3.0, 0)) == pytest.approx(2.0)
    assert boundary_distance(Domain.interval(-1, 1), -1.5) == pytest.approx(0.5)


@pytest.mark.parametrize(
    "dom", [Domain.interval(-1, 2), Domain.disk((0.3, 0.1), 1.0), Domain.square((-0.5, 0), 1.0)]
)
def test_grid_invariants(dom):
    g = make_grid(dom, 1 / 20 if dom.dim == 2 else 1 / 64)
    assert np.all(dom.contains(g.nodes))
    assert np.all(g.delta > 0)
    assert g.tail_radius >= 1 / 3 + 4 / 3 * (dom.diameter + dom.dist_to_origin) - 1e-12
    # delta is 1-Lipschitz
    i = np.arange(0, g.n, max(1, g.n // 60))
    d = np.sqrt(np.sum((g.nodes[i, None] - g.nodes[None, i]) ** 2, axis=-1))
    assert np.all(np.abs(g.delta[i, None] - g.delta[None, i]) <= d + 1e-12)


def test_disk_measure_converges():
    dom = Domain.disk((0, 0), 1)
    errs = [abs(make_grid(dom, h).total_measure - np.pi) for h in (1 / 8, 1 / 16, 1 / 32, 1 / 64)]
    assert errs[-1] < errs[0]
    assert errs[-1] < 2 * np.pi * 1 / 64


def test_refinement_covers_coarse_cells():
    dom = Domain.disk((0, 0), 1)
    coarse, fine = make_grid(dom, 1 / 8), make_grid(dom, 1 / 16)
    owner = {tuple(np.floor((x - coarse.origin) / coarse.h).astype(int)) for x in fine.nodes}
    kept = {tuple(r) for r in coarse.index}
    assert kept <= owner


def test_field_arithmetic():
    g = make_grid(Domain.interval(0, 1), 0.25)
    u = g.evaluate(lambda x: x)
    v = 2 * u + 1
    np.testing.assert_allclose(v.values, 2 * g.x + 1)
    assert u.integral() == pytest.approx(0.5)
    assert u.inner(g.ones()) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        Field(g, np.ones(g.n + 1))


@settings(max_examples=40, deadline=None)
@given(a=st.floats(-5, 5), length=st.floats(0.5, 4), n=st.integers(3, 200))
def test_interval_grid_measure_exact(a, length, n):
    g = make_grid(Domain.interval(a, a + length), length / n)
    assert g.n == n
    assert g.total_measure == pytest.approx(length, rel=1e-12)

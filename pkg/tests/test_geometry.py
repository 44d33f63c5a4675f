import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import smooth_field
from nerimf.errors import GeometryError, IncompatibleDataError
from nerimf.geometry import (apply_laplacian, build_geometry, disc_green_exact, first_eigenvalue,
                             geodesic_distance, green_function, interpolator, point_source, poisson_residual,
                             solve_poisson)


def test_torus_volume_exact(torus64):
    assert torus64.total_volume == pytest.approx(1.0, abs=1e-14)


def test_disc_volume():
    g = build_geometry("disc", 128)
    assert abs(g.total_volume - math.pi) <= 0.02 * math.pi


def test_annulus_volume():
    g = build_geometry("annulus", 128, {"r_in": 0.5, "r_out": 1.0})
    assert abs(g.total_volume - 0.75 * math.pi) <= 0.02 * 0.75 * math.pi


def test_rectangle_volume_exact():
    g = build_geometry("rectangle", 32, {"lx": 2.0, "ly": 0.5})
    assert g.total_volume == pytest.approx(1.0, abs=1e-14)


@pytest.mark.parametrize("kind,params", [
    ("annulus", {"r_in": 1.0, "r_out": 0.5}),
    ("disc", {"radius": -1.0}),
    ("rectangle", {"lx": 0.0}),
    ("flat_torus", {"periods": (1.0, -1.0)}),
    ("sphere", {}),
])
def test_invalid_params(kind, params):
    with pytest.raises(GeometryError):
        build_geometry(kind, 16, params)


def test_resolution_floor():
    with pytest.raises(GeometryError):
        build_geometry("disc", 4)


def test_torus_row_sums_and_constants(torus32):
    rows = np.asarray(torus32.stiffness.sum(axis=1)).ravel()
    assert np.max(np.abs(rows)) <= 1e-12
    assert np.max(np.abs(apply_laplacian(torus32, np.full(torus32.n, 3.0)))) <= 1e-12


def test_dirichlet_laplacian_negative_definite(disc32):
    K = disc32.stiffness[disc32.interior_index][:, disc32.interior_index].toarray()
    assert np.allclose(K, K.T, atol=1e-14)
    assert np.linalg.eigvalsh(K).min() > 0


def test_torus_laplacian_sine():
    errs = []
    for n in (32, 64):
        g = build_geometry("flat_torus", n)
        x = g.nodes[:, 0]
        errs.append(np.max(np.abs(apply_laplacian(g, np.sin(2 * math.pi * x)) + 4 * math.pi ** 2 * np.sin(2 * math.pi * x))))
    assert errs[1] < 0.3 * errs[0]      # O(h^2)
    assert errs[1] < 0.05


def test_rectangle_laplacian_parabola(rect32):
    x = rect32.nodes[:, 0]
    L = apply_laplacian(rect32, x * (1 - x))
    assert np.max(np.abs(L[rect32.interior_mask] + 2.0)) <= 1e-9
    # identity rows on the boundary
    assert np.allclose(L[~rect32.interior_mask], (x * (1 - x))[~rect32.interior_mask])


def test_apply_laplacian_size_mismatch(disc32):
    with pytest.raises(GeometryError):
        apply_laplacian(disc32, np.zeros(3))


def test_poisson_zero(disc32):
    assert np.all(solve_poisson(disc32, np.zeros(disc32.n)) == 0)


def test_poisson_disc_constant():
    g = build_geometry("disc", 128)
    u = solve_poisson(g, np.ones(g.n))
    k = g.nearest_node((0.0, 0.0))
    assert abs(u[k] - (1 - g.distances((0, 0))[k] ** 2) / 4) <= 2e-3
    assert poisson_residual(g, u, np.ones(g.n)) <= 1e-10


def test_poisson_torus_fourier():
    errs = []
    for n in (32, 64):
        g = build_geometry("flat_torus", n)
        f = np.sin(2 * math.pi * g.nodes[:, 0])
        u = solve_poisson(g, f)
        errs.append(np.max(np.abs(u - f / (4 * math.pi ** 2))))
        assert abs(g.mean(u)) <= 1e-14
        assert poisson_residual(g, u, f) <= 1e-10
    assert errs[1] < 0.3 * errs[0] and errs[1] < 1e-4


def test_poisson_torus_incompatible(torus32):
    with pytest.raises(IncompatibleDataError):
        solve_poisson(torus32, np.ones(torus32.n))


def test_poisson_wrong_bc(torus32, disc32):
    with pytest.raises(GeometryError):
        solve_poisson(disc32, np.ones(disc32.n), bc="mean_zero")


def test_cg_path_matches_direct(disc32):
    f = np.ones(disc32.n)
    g2 = build_geometry("disc", 32, solver="cg")
    assert np.max(np.abs(solve_poisson(disc32, f) - solve_poisson(g2, f))) <= 1e-9


def test_green_disc_center():
    g = build_geometry("disc", 128)
    G = green_function(g, (0.0, 0.0))
    assert abs(G.regular_part_at_source) <= 5e-3
    far = g.distances((0, 0)) > 0.2
    exact = disc_green_exact(g.nodes[far], (0.0, 0.0))
    assert np.max(np.abs(G.values[far] - exact)) <= 5e-3


def test_green_disc_off_center_boundary(disc64):
    G = green_function(disc64, (0.3, 0.0))
    assert np.max(np.abs(G.values[~disc64.interior_mask])) <= 1e-8


def test_green_torus_mean_zero(torus32):
    G = green_function(torus32, (0.3, 0.7))
    assert abs(torus32.mean(G.values)) <= 1e-10


def test_green_reproduction(disc64):
    f, _, _ = point_source(disc64, (0.2, -0.1))
    assert np.max(np.abs(solve_poisson(disc64, f) - green_function(disc64, (0.2, -0.1)).values)) <= 1e-10


def test_green_outside_domain(disc32):
    with pytest.raises(GeometryError):
        green_function(disc32, (2.0, 0.0))


def test_first_eigenvalue_examples():
    assert abs(first_eigenvalue(build_geometry("flat_torus", 64)) - 4 * math.pi ** 2) <= 0.01 * 4 * math.pi ** 2
    assert abs(first_eigenvalue(build_geometry("flat_torus", 64, {"periods": (2.0, 1.0)})) - math.pi ** 2) <= 0.01 * math.pi ** 2
    assert abs(first_eigenvalue(build_geometry("disc", 64)) - 5.7832) <= 0.01 * 5.7832


def test_geodesic_distance_examples(torus32, disc32, rect32):
    assert geodesic_distance(torus32, (0.1, 0.0), (0.9, 0.0)) == pytest.approx(0.2, abs=1e-14)
    assert geodesic_distance(disc32, (0.3, 0.2), (0.3, 0.2)) == 0.0
    assert geodesic_distance(rect32, (0.0, 0.0), (3.0, 4.0)) == 5.0


def test_interpolator_exact_on_linear(rect32, torus32):
    f = interpolator(rect32, 2 * rect32.nodes[:, 0] - rect32.nodes[:, 1])
    assert f(np.array([[0.33, 0.71]]))[0] == pytest.approx(2 * 0.33 - 0.71, abs=1e-12)
    c = np.cos(2 * math.pi * torus32.nodes[:, 0])
    ft = interpolator(torus32, c)
    assert ft(np.array([[1.25, 0.5]]))[0] == pytest.approx(ft(np.array([[0.25, 0.5]]))[0], abs=1e-14)


# properties ------------------------------------------------------------------------

GEOS = {k: build_geometry(k, 24) for k in ("rectangle", "disc", "annulus", "flat_torus")}


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(sorted(GEOS)), st.integers(0, 2 ** 32 - 1))
def test_laplacian_symmetric(kind, seed):
    g = GEOS[kind]
    rng = np.random.default_rng(seed)
    u, v = g.project(rng.standard_normal(g.n)), g.project(rng.standard_normal(g.n))
    a, b = g.inner_w(apply_laplacian(g, u), v), g.inner_w(u, apply_laplacian(g, v))
    assert abs(a - b) <= 1e-10 * max(1.0, abs(a))


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(sorted(GEOS)), st.integers(0, 2 ** 32 - 1))
def test_integration_by_parts(kind, seed):
    g = GEOS[kind]
    u = smooth_field(g, np.random.default_rng(seed))
    assert abs(-g.inner_w(apply_laplacian(g, u), u) - g.energy(u)) <= 1e-10 * max(1.0, g.energy(u))


MU1 = first_eigenvalue(GEOS["flat_torus"])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_rayleigh_quotient_bound(seed):
    g = GEOS["flat_torus"]
    u = g.project(np.random.default_rng(seed).standard_normal(g.n))
    assert g.energy(u) / g.inner_w(u, u) >= MU1 - 1e-8


@settings(max_examples=30, deadline=None)
@given(st.floats(0.05, 0.95), st.floats(0.05, 0.95))
def test_torus_green_reproduction_property(x, y):
    g = GEOS["flat_torus"]
    f, _, _ = point_source(g, (x, y))
    G = green_function(g, (x, y))
    assert np.max(np.abs(solve_poisson(g, f - 1.0 / g.total_volume) - G.values)) <= 1e-10

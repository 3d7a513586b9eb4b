from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate
from shapely.geometry import Polygon

from polystab.errors import (
    DegreeUnsupported,
    EmptyInterior,
    MalformedDocument,
    NonPrimitiveNormal,
    ResolutionTooSmall,
    UnboundedPolytope,
)
from polystab.geometry import (
    Facet,
    Polytope,
    build_quadrature,
    canonical_facet_density,
    clip,
    interval,
    moments,
    parse_polytope,
    primitive_normal,
    scalar_summary,
    simplex_rule,
    to_fraction,
    trapezium,
)

from .conftest import SHIPPED, load_shipped


def test_to_fraction_accepts_strings_and_numbers():
    assert to_fraction("3/4") == Fraction(3, 4)
    assert to_fraction(2) == 2
    assert to_fraction(0.5) == Fraction(1, 2)
    with pytest.raises(MalformedDocument):
        to_fraction("abc")


def test_primitive_normal_divides_out_gcd():
    nu, off = primitive_normal((2, -4), 6)
    assert nu == (1, -2) and off == 3


def test_interval_and_square_vertices(p1, square):
    assert len(p1.vertices) == 2
    assert len(square.vertices) == 4
    assert len(square.simplices) == 2
    assert square.volume == 1


def test_rejects_bad_documents():
    with pytest.raises(MalformedDocument):
        parse_polytope("{not json")
    with pytest.raises(MalformedDocument):
        parse_polytope({"dim": 2})
    with pytest.raises(MalformedDocument):
        parse_polytope({"dim": 1, "facets": [{"normal": [1.5], "offset": 0}]})
    with pytest.raises(UnboundedPolytope):
        parse_polytope({"dim": 2, "facets": [{"normal": [1, 0], "offset": 0},
                                              {"normal": [0, 1], "offset": 0}]})
    with pytest.raises(EmptyInterior):
        parse_polytope({"dim": 1, "facets": [{"normal": [1], "offset": 1},
                                              {"normal": [-1], "offset": -1}]})
    with pytest.raises(NonPrimitiveNormal):
        Polytope([Facet((2,), 0), Facet((-1,), -1)])
    with pytest.raises(MalformedDocument):
        Facet((1,), 0, -1)


def test_canonical_density():
    assert canonical_facet_density(Facet((0, 1), 0)) == 1.0
    assert canonical_facet_density(Facet((1, 1), 0)) == pytest.approx(1 / np.sqrt(2))
    for k in range(1, 5):
        assert canonical_facet_density(Facet((1, -k), 0)) == pytest.approx(1 / np.sqrt(1 + k * k))


def test_hypotenuse_has_unit_measure(p2):
    assert p2.facet_measures == (1, 1, 1)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_sloped_edge_measure_is_lattice_length(k):
    # top edge y = 1 + kx from (0,1) to (1,1+k) has lattice length 1
    mp = Polytope([Facet((1, 0), 0), Facet((-1, 0), -1), Facet((0, 1), 0),
                   Facet((k, -1), -1)])
    top = [i for i, f in enumerate(mp.facets) if f.normal == (k, -1)][0]
    assert mp.facet_measures[top] == 1


def test_scalar_summaries(p1, w01, p2):
    s = scalar_summary(p1)
    assert (s.vol_mu, s.vol_sigma, s.s_hat) == (1, 2, 2)
    s = scalar_summary(p2)
    assert (s.vol_mu, s.vol_sigma, s.s_hat) == (Fraction(1, 2), 3, 6)
    s = scalar_summary(w01)
    assert (s.vol_mu, s.vol_sigma, s.s_hat) == (1, 1, 1)


def test_interval_moments(w01):
    mt = moments(w01, 2)
    assert mt.interior[(0,)] == 1
    assert mt.interior[(1,)] == Fraction(1, 2)
    assert mt.interior[(2,)] == Fraction(1, 3)
    assert mt.boundary[(0,)] == 1
    assert mt.boundary[(1,)] == 1
    with pytest.raises(DegreeUnsupported):
        moments(w01, 3)


def test_square_moments(square):
    mt = moments(square, 2)
    assert mt.interior[(1, 0)] == Fraction(1, 2)
    assert mt.boundary[(1, 0)] == 2


def test_trapezium_boundary_moments_match_edge_quadrature(trap2):
    # only the vertical edges x=0 (y in [0,1]) and x=1 (y in [0,2]) carry weight
    mt = moments(trap2, 2)
    y_int = integrate.quad(lambda y: y, 0, 1)[0] + integrate.quad(lambda y: y, 0, 2)[0]
    assert mt.boundary[(0, 0)] == 3
    assert mt.boundary[(1, 0)] == 2
    assert mt.boundary[(0, 1)] == Fraction(5, 2)
    assert float(mt.boundary[(0, 1)]) == pytest.approx(y_int, abs=1e-12)


@pytest.mark.parametrize("name", [n for n in SHIPPED if load_shipped(n)[0].dim == 2])
def test_volume_and_centroid_match_shapely(name):
    mp, _ = load_shipped(name)
    verts = mp.vertex_array
    centre = verts.mean(axis=0)
    order = np.argsort(np.arctan2(verts[:, 1] - centre[1], verts[:, 0] - centre[0]))
    poly = Polygon(verts[order])
    assert float(mp.volume) == pytest.approx(poly.area, rel=1e-12)
    assert [float(c) for c in mp.centroid] == pytest.approx(
        [poly.centroid.x, poly.centroid.y], rel=1e-12)


def test_second_moment_against_dblquad(trap2):
    mt = moments(trap2, 2)
    val = integrate.dblquad(lambda y, x: x * y, 0, 1, 0, lambda x: 1 + x)[0]
    assert float(mt.interior[(1, 1)]) == pytest.approx(val, rel=1e-10)


def test_simplex_rule_exact_for_quadratics():
    for m in (1, 2, 3):
        bary, w = simplex_rule(m)
        assert w.sum() == pytest.approx(1.0)
        # int over reference simplex of lambda_0^2 = 2 / ((m+1)(m+2)) relative to volume
        assert float(w @ bary[:, 0] ** 2) == pytest.approx(2 / ((m + 1) * (m + 2)))


def test_quadrature_partition_of_unity(square):
    q = build_quadrature(square, 2)
    assert q.interior_weights.sum() == pytest.approx(1.0, abs=1e-15)
    assert q.n_nodes == 9


@pytest.mark.parametrize("grading", [1.0, 1.5, 3.0])
def test_interval_mesh_nodes_and_boundary(grading):
    mp = interval(0, 1, (Fraction(1, 2), 1))
    q = build_quadrature(mp, 10, grading)
    assert q.n_nodes == 11
    xs = q.mesh_nodes[:, 0]
    assert xs.min() == 0 and xs.max() == 1
    assert np.all(np.diff(np.sort(xs)) > 0)
    bl = q.boundary_load
    assert bl[np.argmin(xs)] == pytest.approx(0.5)
    assert bl[np.argmax(xs)] == pytest.approx(1.0)


def test_trapezium_boundary_weights(trap2):
    q = build_quadrature(trap2, 8)
    assert q.boundary_weights.sum() == pytest.approx(3.0, abs=1e-13)
    assert np.all(q.boundary_weights >= 0)


def test_resolution_errors(square):
    with pytest.raises(ResolutionTooSmall):
        build_quadrature(square, 1)
    with pytest.raises(ResolutionTooSmall):
        build_quadrature(square, 4, grading=2.0)


def test_clip_produces_zero_weight_cut(square):
    left = clip(square, (-2, 0), -1)
    assert left.volume == Fraction(1, 2)
    cuts = [f for f in left.facets if f.cut]
    assert len(cuts) == 1 and cuts[0].sigma_weight == 0
    assert clip(square, (1, 0), 5) is None


@settings(max_examples=30, deadline=None)
@given(st.fractions(min_value=Fraction(1, 8), max_value=8, max_denominator=16))
def test_trapezium_volume_formula(l):
    mp = trapezium(l)
    assert mp.volume == (1 + l) / 2
    assert scalar_summary(mp).vol_sigma == 1 + l


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 6), st.integers(0, 3))
def test_quadrature_integrates_affine_exactly(N, seed):
    mp = trapezium(Fraction(3, 2))
    q = build_quadrature(mp, N)
    rng = np.random.default_rng(seed)
    a, b, c = rng.normal(size=3)
    vals = a * q.mesh_nodes[:, 0] + b * q.mesh_nodes[:, 1] + c
    mt = moments(mp, 1)
    exact = a * float(mt.interior[(1, 0)]) + b * float(mt.interior[(0, 1)]) + c * float(mp.volume)
    assert q.integrate(vals) == pytest.approx(exact, abs=1e-12)
    bexact = (a * float(mt.boundary[(1, 0)]) + b * float(mt.boundary[(0, 1)])
              + c * float(mt.boundary[(0, 0)]))
    assert q.integrate_boundary(vals) == pytest.approx(bexact, abs=1e-12)

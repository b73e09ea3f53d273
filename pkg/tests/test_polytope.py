"""Tests for polytope set arithmetic."""

import itertools

import numpy as np
import pytest
from scipy.spatial import ConvexHull

from app.core.errors import DimensionMismatch
from app.services.polytope_service import (
    HPolytope,
    Interval,
    boundary_samples,
    box,
    contains,
    contains_point,
    hpoly,
    inf_ball,
    is_empty,
    linear_image_box,
    linear_map,
    maximal_admissible_set,
    minkowski_sum,
    point,
    pontryagin_diff,
    scale,
    support,
    support_many,
    translate,
    zonotope,
)


def _random_hull(rng, n_points=12, spread=1.0, shift=None):
    pts = rng.uniform(-spread, spread, size=(n_points, 2))
    if shift is not None:
        pts = pts + shift
    hull = ConvexHull(pts)
    vertices = pts[hull.vertices]
    normals = hull.equations[:, :2]
    offsets = -hull.equations[:, 2]
    return hpoly(normals, offsets), vertices


def _box_vertices(p: HPolytope) -> np.ndarray:
    corners = itertools.product(*[(-1.0, 1.0)] * p.dim)
    return np.array([p.center + p.half_widths * np.array(s) for s in corners])


def _directions(rng, count=40, dim=2):
    d = rng.standard_normal((count, dim))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


class TestFactories:
    def test_box_facets_and_generators(self):
        b = box([1.0, -1.0], [2.0, 0.5])

        assert b.kind == "box"
        assert b.dim == 2
        assert b.n_facets == 4
        np.testing.assert_allclose(b.half_widths, [2.0, 0.5])
        assert contains_point(b, [3.0, -0.5])
        assert not contains_point(b, [3.1, -0.5])

    def test_negative_half_width_rejected(self):
        with pytest.raises(ValueError):
            box([0.0], [-1.0])

    def test_point_of_dimension(self):
        p = point(3)

        assert p.dim == 3
        np.testing.assert_allclose(p.half_widths, 0.0)

    def test_empty_hpoly_rejected(self):
        with pytest.raises(ValueError):
            hpoly([[1.0], [-1.0]], [-1.0, -1.0])

    def test_unbounded_hpoly_flagged(self):
        half_plane = hpoly([[1.0, 0.0]], [1.0])

        assert not half_plane.bounded
        assert support(half_plane, [0.0, 1.0]) == np.inf

    def test_zonotope_hrep_matches_generators(self, rng):
        z = zonotope([0.5, 0.0], np.array([[1.0, 1.0, 0.2], [0.0, 1.0, -0.3]]))
        as_hpoly = hpoly(z.normals, z.offsets)

        for d in _directions(rng):
            assert support(as_hpoly, d) == pytest.approx(support(z, d), abs=1e-9)

    def test_parallel_generators_merged(self):
        z = zonotope([0.0, 0.0], np.array([[1.0, -2.0], [1.0, -2.0]]))

        assert z.generators.shape[1] == 1
        np.testing.assert_allclose(np.abs(z.generators[:, 0]), [3.0, 3.0])

    def test_dict_round_trip_keeps_kind(self):
        z = zonotope([0.0, 1.0], np.array([[1.0, 0.5], [0.0, 1.0]]))
        back = HPolytope.from_dict(z.to_dict())

        assert back.kind == "zonotope"
        np.testing.assert_allclose(back.generators, z.generators)


class TestSupport:
    def test_unit_box_axes(self):
        unit = box([0.0, 0.0], 1.0)

        assert support(unit, [1.0, 0.0]) == pytest.approx(1.0)
        assert support(unit, [1.0, 1.0]) == pytest.approx(2.0)

    def test_matches_vertex_enumeration(self, rng):
        for _ in range(10):
            p, vertices = _random_hull(rng)
            for d in _directions(rng, count=10):
                assert support(p, d) == pytest.approx(float(np.max(vertices @ d)), abs=1e-9)

    def test_positively_homogeneous(self, rng):
        p, _ = _random_hull(rng)
        d = np.array([0.3, -0.7])

        assert support(p, 2.5 * d) == pytest.approx(2.5 * support(p, d), abs=1e-9)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            support(box([0.0, 0.0], 1.0), [1.0, 0.0, 0.0])


class TestMinkowskiSum:
    def test_identity_element(self):
        unit = box([0.0, 0.0], 1.0)
        out = minkowski_sum(unit, point(2))

        np.testing.assert_allclose(out.half_widths, [1.0, 1.0])

    def test_box_addition(self):
        out = minkowski_sum(box([0.0, 0.0], 1.0), box([0.0, 0.0], 0.5))

        assert out.kind == "box"
        np.testing.assert_allclose(out.half_widths, [1.5, 1.5])

    def test_random_pair_matches_vertex_sums(self, rng):
        for _ in range(5):
            a, va = _random_hull(rng)
            b, vb = _random_hull(rng, spread=0.5, shift=np.array([1.0, 0.0]))
            sums = (va[:, None, :] + vb[None, :, :]).reshape(-1, 2)
            out = minkowski_sum(a, b)
            for d in _directions(rng, count=10):
                assert support(out, d) == pytest.approx(float(np.max(sums @ d)), abs=1e-9)

    def test_commutative_and_associative(self, rng):
        a = zonotope([0.1, 0.0], rng.uniform(-1, 1, size=(2, 3)))
        b = box([0.0, 0.3], [0.2, 0.4])
        c = zonotope([0.0, 0.0], rng.uniform(-1, 1, size=(2, 2)))

        left = minkowski_sum(minkowski_sum(a, b), c)
        right = minkowski_sum(a, minkowski_sum(c, b))
        D = _directions(rng)
        np.testing.assert_allclose(support_many(left, D), support_many(right, D), atol=1e-9)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            minkowski_sum(box([0.0], 1.0), box([0.0, 0.0], 1.0))


class TestPontryaginDiff:
    def test_identity_element(self):
        out = pontryagin_diff(box([0.0, 0.0], 1.0), point(2))

        np.testing.assert_allclose(out.half_widths, [1.0, 1.0])

    def test_box_erosion(self):
        out = pontryagin_diff(box([0.0, 0.0], 1.0), box([0.0, 0.0], 0.4))

        np.testing.assert_allclose(out.half_widths, [0.6, 0.6])
        np.testing.assert_allclose(out.center, [0.0, 0.0])

    def test_empty_result_is_none(self):
        assert pontryagin_diff(box([0.0, 0.0], 0.5), box([0.0, 0.0], 1.0)) is None

    def test_erode_then_dilate_is_contained(self, rng):
        for _ in range(5):
            a, _ = _random_hull(rng, spread=2.0)
            b = zonotope([0.0, 0.0], 0.1 * rng.uniform(-1, 1, size=(2, 2)))
            eroded = pontryagin_diff(a, b)
            if eroded is None:
                continue
            assert contains(a, minkowski_sum(eroded, b), tol=1e-7)

    def test_box_minus_zonotope(self):
        a = box([0.0, 0.0], [2.0, 1.0])
        b = zonotope([0.0, 0.0], np.array([[0.5, 0.1], [0.0, 0.2]]))
        out = pontryagin_diff(a, b)

        np.testing.assert_allclose(out.half_widths, [1.4, 0.8])


class TestContains:
    def test_nested_boxes(self):
        big = box([0.0, 0.0], 1.0)
        small = box([0.0, 0.0], 0.5)

        assert contains(big, small)
        assert not contains(small, big)

    def test_reflexive_and_transitive(self, rng):
        a, _ = _random_hull(rng)
        b = minkowski_sum(a, box([0.0, 0.0], 0.1))
        c = minkowski_sum(b, box([0.0, 0.0], 0.1))

        assert contains(a, a)
        assert contains(b, a) and contains(c, b)
        assert contains(c, a)

    def test_consistent_with_vertex_falsification(self, rng):
        for _ in range(30):
            outer = box(rng.uniform(-0.5, 0.5, 2), rng.uniform(0.5, 1.5, 2))
            inner = box(rng.uniform(-0.5, 0.5, 2), rng.uniform(0.1, 1.0, 2))
            inside = all(contains_point(outer, v) for v in _box_vertices(inner))
            assert contains(outer, inner) == inside


class TestScaleAndMaps:
    def test_scale_unit_box(self):
        out = scale(box([0.0, 0.0, 0.0], 1.0), 2.0)

        np.testing.assert_allclose(out.half_widths, [2.0, 2.0, 2.0])

    def test_scale_identity(self, rng):
        p, _ = _random_hull(rng)
        np.testing.assert_allclose(scale(p, 1.0).offsets, p.offsets)

    def test_half_scale_is_contained(self):
        p = hpoly([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [-1.0, -1.0]], [1.0, 0.5, 2.0, 1.0])

        assert contains(p, scale(p, 0.5))

    def test_negative_factor_rejected(self):
        with pytest.raises(ValueError):
            scale(box([0.0], 1.0), -1.0)

    def test_translate_moves_center(self):
        out = translate(box([0.0, 0.0], 1.0), [2.0, -1.0])

        np.testing.assert_allclose(out.center, [2.0, -1.0])
        assert contains_point(out, [3.0, 0.0])

    def test_identity_image(self):
        b = box([0.5, -0.5], [1.0, 2.0])
        out = linear_image_box(b, np.eye(2))

        np.testing.assert_allclose(out.center, b.center)
        np.testing.assert_allclose(out.half_widths, b.half_widths)

    def test_rotation_image(self):
        c = s = np.sqrt(0.5)
        out = linear_image_box(box([0.0, 0.0], 1.0), np.array([[c, -s], [s, c]]))

        np.testing.assert_allclose(out.half_widths, [np.sqrt(2.0)] * 2)

    def test_random_image_matches_vertex_hull(self, rng):
        for _ in range(10):
            b = box(rng.uniform(-1, 1, 3), rng.uniform(0.1, 1.0, 3))
            m = rng.uniform(-2, 2, size=(2, 3))
            image = _box_vertices(b) @ m.T
            out = linear_image_box(b, m)
            np.testing.assert_allclose(out.center - out.half_widths, image.min(axis=0), atol=1e-9)
            np.testing.assert_allclose(out.center + out.half_widths, image.max(axis=0), atol=1e-9)


    def test_linear_map_of_box_is_exact(self):
        out = linear_map(box([1.0, 0.0], [1.0, 0.5]), np.array([[1.0, 1.0], [0.0, 2.0]]))

        np.testing.assert_allclose(out.center, [1.0, 0.0])
        assert contains_point(out, [2.5, 1.0])
        assert not contains_point(out, [2.5, -1.0])

    def test_linear_map_needs_generators(self):
        with pytest.raises(NotImplementedError):
            linear_map(hpoly(np.vstack([np.eye(2), -np.eye(2)]), np.ones(4)), np.eye(2))


class TestSamples:
    def test_inf_ball_is_centred_box(self):
        ball = inf_ball(3, 0.2)

        np.testing.assert_allclose(ball.center, np.zeros(3))
        np.testing.assert_allclose(ball.half_widths, [0.2, 0.2, 0.2])

    def test_boundary_samples_touch_a_facet(self, rng):
        b = box([1.0, -1.0], [2.0, 0.5])
        pts = boundary_samples(b, 200, rng)
        ratio = np.abs(pts - b.center) / b.half_widths

        assert pts.shape == (200, 2)
        np.testing.assert_allclose(ratio.max(axis=1), 1.0, atol=1e-12)

class TestAdmissibleSet:
    def test_contractive_map_keeps_box(self):
        X = box([0.0, 0.0], 1.0)
        out = maximal_admissible_set(0.5 * np.eye(2), X.normals, X.offsets)

        assert contains(out, X) and contains(X, out)

    def test_rotation_cuts_corners(self):
        c = s = np.sqrt(0.5)
        X = box([0.0, 0.0], 1.0)
        out = maximal_admissible_set(0.9 * np.array([[c, -s], [s, c]]), X.normals, X.offsets)

        assert contains(X, out)
        assert not contains_point(out, [1.0, 1.0])
        assert not is_empty(out)

    def test_origin_outside_gives_none(self):
        assert maximal_admissible_set(np.eye(1), np.array([[1.0], [-1.0]]), np.array([-0.5, 1.0])) is None


class TestInterval:
    def test_arithmetic(self):
        a = Interval(-1.0, 2.0)

        assert a.width == 3.0
        assert a.magnitude == 2.0
        assert a.scaled(-2.0) == Interval(-4.0, 2.0)
        assert (a + Interval(1.0, 1.0)) == Interval(0.0, 3.0)

    def test_invalid_bounds(self):
        with pytest.raises(ValueError):
            Interval(1.0, 0.0)

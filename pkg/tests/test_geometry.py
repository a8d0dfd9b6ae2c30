import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relate3d.geometry import (
    Box3D, bev_corners, convex_intersection_area, iou_3d, iou_bev, normalize_angle, polygon_area,
    transform_flip_x, transform_rotate_z, transform_scale, vertical_overlap,
)
from relate3d.oracles import raster_intersection_area, raster_iou_bev

from conftest import angles, boxes, random_box


def as_set(corners, nd=12):
    return {(round(float(x), nd) + 0.0, round(float(y), nd) + 0.0) for x, y in corners}


def unit(**kw):
    base = dict(x=0.0, y=0.0, z=0.0, h=1.0, w=1.0, l=1.0, theta=0.0)
    base.update(kw)
    return Box3D(**base)


# -- Box3D ------------------------------------------------------------------

def test_box_rejects_bad_sizes():
    with pytest.raises(ValueError):
        unit(h=0.0)
    with pytest.raises(ValueError):
        unit(w=-1.0)
    with pytest.raises(ValueError):
        unit(x=math.nan)
    with pytest.raises(ValueError):
        unit(theta=math.inf)


@pytest.mark.parametrize("raw, wrapped", [
    (0.0, 0.0), (math.pi, math.pi), (-math.pi, math.pi), (3 * math.pi, math.pi),
    (2 * math.pi, 0.0), (-0.5, -0.5), (7.0, 7.0 - 2 * math.pi),
])
def test_normalize_angle(raw, wrapped):
    assert normalize_angle(raw) == pytest.approx(wrapped, abs=1e-12)
    assert -math.pi < normalize_angle(raw) <= math.pi


def test_box_theta_is_normalized():
    assert unit(theta=-math.pi).theta == math.pi
    assert unit(theta=4.0).theta == pytest.approx(4.0 - 2 * math.pi)


def test_array_round_trip():
    b = Box3D(1.5, -2.0, 0.3, 1.6, 1.8, 4.2, 0.7)
    assert Box3D.from_array(b.to_array()) == b


# -- corners and polygons ---------------------------------------------------

def test_unit_square_corners():
    assert as_set(bev_corners(unit())) == {(0.5, 0.5), (-0.5, 0.5), (-0.5, -0.5), (0.5, -0.5)}


def test_square_quarter_turn_same_corners():
    assert as_set(bev_corners(unit(theta=math.pi / 2))) == as_set(bev_corners(unit()))


def test_quarter_turn_swaps_extents():
    got = as_set(bev_corners(unit(l=2.0, theta=math.pi / 2)))
    assert got == {(0.5, 1.0), (-0.5, 1.0), (-0.5, -1.0), (0.5, -1.0)}


@given(boxes())
def test_corners_are_ccw_with_box_area(b):
    c = bev_corners(b)
    assert polygon_area(c) == pytest.approx(b.w * b.l, rel=1e-12)


def test_intersection_with_itself():
    sq = bev_corners(unit())
    assert convex_intersection_area(sq, sq) == pytest.approx(1.0, abs=1e-12)


def test_half_offset_squares():
    a = bev_corners(unit())
    b = bev_corners(unit(x=0.5))
    assert convex_intersection_area(a, b) == pytest.approx(0.5, abs=1e-12)


def test_rotated_square_matches_raster():
    a = bev_corners(unit())
    b = bev_corners(unit(theta=math.pi / 4))
    area = convex_intersection_area(a, b)
    assert abs(area - raster_intersection_area(a, b)) < 2e-3
    # regular octagon
    assert area == pytest.approx(2 * (math.sqrt(2) - 1), abs=1e-12)
    assert area == pytest.approx(0.828427, abs=1e-6)


def test_empty_polygon_has_no_area():
    assert convex_intersection_area([], bev_corners(unit())) == 0.0
    assert polygon_area([]) == 0.0


@given(boxes(), boxes())
def test_intersection_bounded_by_smaller_area(a, b):
    inter = convex_intersection_area(bev_corners(a), bev_corners(b))
    assert -1e-12 <= inter <= min(a.bev_area, b.bev_area) * (1 + 1e-9)


# -- IoU --------------------------------------------------------------------

def test_iou_examples():
    assert iou_bev(unit(), unit()) == 1.0
    assert iou_bev(unit(), unit(x=3.0)) == 0.0
    assert iou_bev(unit(), unit(x=0.5)) == pytest.approx(1 / 3, abs=1e-12)
    assert iou_3d(unit(), unit()) == 1.0
    assert iou_3d(unit(), unit(z=2.0)) == 0.0
    assert iou_3d(unit(), unit(z=0.5)) == pytest.approx(1 / 3, abs=1e-12)


def test_touching_boxes_have_zero_iou():
    assert iou_bev(unit(), unit(x=1.0)) == pytest.approx(0.0, abs=1e-12)
    assert iou_bev(unit(), unit(x=1.0, y=1.0)) == pytest.approx(0.0, abs=1e-12)


@settings(max_examples=300)
@given(boxes(), boxes())
def test_iou_symmetric_and_bounded(a, b):
    assert iou_bev(a, b) == iou_bev(b, a)
    assert iou_3d(a, b) == iou_3d(b, a)
    assert 0.0 <= iou_bev(a, b) <= 1.0
    assert 0.0 <= iou_3d(a, b) <= 1.0


@given(boxes())
def test_self_iou_is_exactly_one(a):
    assert iou_bev(a, a) == 1.0
    assert iou_3d(a, a) == 1.0


@given(boxes(), boxes())
def test_far_apart_is_exactly_zero(a, b):
    gap = 0.5 * (a.bev_diagonal + b.bev_diagonal) + 1e-6
    b = b.replace(x=a.x + gap, y=a.y)
    assert iou_bev(a, b) == 0.0
    assert iou_3d(a, b) == 0.0


@settings(max_examples=200)
@given(boxes(), boxes(), angles)
def test_rigid_rotation_invariance(a, b, phi):
    ra, rb = transform_rotate_z(a, phi), transform_rotate_z(b, phi)
    assert iou_bev(ra, rb) == pytest.approx(iou_bev(a, b), abs=1e-9)


def test_iou_3d_decomposes_into_bev_and_height(rng):
    for _ in range(200):
        a, b = random_box(rng), random_box(rng)
        inter = iou_bev(a, b) * (a.bev_area + b.bev_area) / (1 + iou_bev(a, b)) * vertical_overlap(a, b)
        expect = inter / (a.volume + b.volume - inter) if inter > 0 else 0.0
        assert iou_3d(a, b) == pytest.approx(expect, abs=1e-9)


def test_iou_bev_matches_raster(rng):
    worst = 0.0
    for _ in range(150):
        a, b = random_box(rng), random_box(rng)
        worst = max(worst, abs(iou_bev(a, b) - raster_iou_bev(a, b)))
    assert worst < 2e-3


# -- transforms -------------------------------------------------------------

def test_flip_examples():
    b = Box3D(1, 2, 0, 1, 1, 1, 0.3)
    f = transform_flip_x(b)
    assert (f.x, f.y, f.theta) == (1.0, -2.0, -0.3)
    fixed = Box3D(1, 0, 0, 1, 1, 1, 0.0)
    assert transform_flip_x(fixed) == fixed


@given(boxes())
def test_double_flip_is_identity(b):
    assert transform_flip_x(transform_flip_x(b)) == b


def test_rotate_examples():
    b = Box3D(1, 0, 0, 1, 1, 1, 0.0)
    assert transform_rotate_z(b, 0.0) == b
    r = transform_rotate_z(b, math.pi / 2)
    assert (r.x, r.y, r.theta) == pytest.approx((0.0, 1.0, math.pi / 2), abs=1e-15)


@given(boxes(), angles)
def test_rotate_inverse(b, phi):
    back = transform_rotate_z(transform_rotate_z(b, phi), -phi)
    assert np.allclose(back.to_array()[:6], b.to_array()[:6], atol=1e-12, rtol=0)
    assert abs(normalize_angle(back.theta - b.theta)) < 1e-12


def test_scale_examples():
    b = Box3D(1, 1, 1, 1, 1, 1, 0.4)
    assert transform_scale(b, 1.0) == b
    s = transform_scale(b, 2.0)
    assert (s.x, s.y, s.z, s.h, s.w, s.l, s.theta) == (2.0, 2.0, 2.0, 2.0, 2.0, 2.0, 0.4)
    with pytest.raises(ValueError):
        transform_scale(b, 0.0)


@given(boxes(), boxes(), st.floats(0.1, 10.0))
def test_scale_invariance_of_iou(a, b, s):
    assert iou_bev(transform_scale(a, s), transform_scale(b, s)) == pytest.approx(iou_bev(a, b), abs=1e-9)

import math

import numpy as np
import pytest
import shapely
from hypothesis import given
from hypothesis import strategies as st

from espkit import geometry as geo
from espkit.token_model import BoundingBox2D, FrameState
from helpers import W, straight_lanes

coords = st.floats(-50, 50, allow_nan=False)
point = st.tuples(coords, coords)


def test_footprint_corners_axis_aligned():
    c = geo.footprint_corners(1.0, 2.0, 0.0, 4.0, 2.0)
    np.testing.assert_allclose(c, [[3, 3], [-1, 3], [-1, 1], [3, 1]])


def test_footprint_corners_rotated_quarter_turn():
    c = geo.footprint_corners(0.0, 0.0, math.pi / 2, 4.0, 2.0)
    np.testing.assert_allclose(c, [[-1, 2], [-1, -2], [1, -2], [1, 2]], atol=1e-12)


def test_footprint_is_counter_clockwise():
    c = geo.footprint_corners(3.0, -1.0, 0.7, 5.0, 2.0)
    area = 0.5 * sum(c[i, 0] * c[(i + 1) % 4, 1] - c[(i + 1) % 4, 0] * c[i, 1] for i in range(4))
    assert area == pytest.approx(10.0)


@pytest.mark.parametrize(
    "a1,a2,b1,b2,expected",
    [
        ((0, 0), (2, 2), (0, 2), (2, 0), True),
        ((0, 0), (1, 0), (2, 0), (3, 0), False),
        ((0, 0), (2, 0), (2, 0), (3, 1), True),  # shared endpoint
        ((0, 0), (2, 0), (1, 0), (3, 0), True),  # collinear overlap
        ((0, 0), (1, 1), (0, 1), (0.4, 0.6), False),
    ],
)
def test_segments_intersect_cases(a1, a2, b1, b2, expected):
    assert geo.segments_intersect(a1, a2, b1, b2) is expected


@given(point, point, point, point)
def test_segment_intersection_symmetric_and_vectorised(a1, a2, b1, b2):
    r = geo.segments_intersect(a1, a2, b1, b2)
    assert r == geo.segments_intersect(b1, b2, a1, a2)
    assert r == geo.segments_intersect(a2, a1, b2, b1)
    v = geo.segments_intersect_many(*(np.array([p], dtype=float) for p in (a1, a2, b1, b2)))
    assert bool(v[0]) == r


def test_segments_intersect_matches_shapely():
    rng = np.random.default_rng(11)
    for _ in range(2000):
        p = rng.integers(-5, 6, size=(4, 2)).astype(float)  # integer grid hits the degenerate cases
        if (p[0] == p[1]).all() or (p[2] == p[3]).all():
            continue
        ref = shapely.LineString(p[:2]).intersects(shapely.LineString(p[2:]))
        assert geo.segments_intersect(*p) == ref, p


def test_footprint_crossing_matches_shapely():
    rng = np.random.default_rng(5)
    for _ in range(1500):
        x, y = rng.uniform(-6, 6, 2)
        h = rng.uniform(-math.pi, math.pi)
        ln, wd = rng.uniform(1, 10), rng.uniform(0.5, 3)
        poly = np.cumsum(rng.uniform(-4, 4, size=(int(rng.integers(2, 6)), 2)), axis=0)
        fp = geo.OrientedFootprint(geo.footprint_corners(x, y, h, ln, wd))
        ref = shapely.Polygon(fp.corners).intersects(shapely.LineString(poly))
        assert geo.footprint_crosses_polyline(fp, poly) == ref


def test_polyline_inside_footprint_counts_as_crossing():
    fp = geo.OrientedFootprint(geo.footprint_corners(0, 0, 0, 10, 4))
    assert geo.footprint_crosses_polyline(fp, [(-1, 0), (1, 0)])


def test_lamt_first_touching_frame():
    box = BoundingBox2D(4.0, 2.0)
    traj = [FrameState(k / 10, 10.0 * k / 10, 0.1 * k, 0.0, 10.0) for k in range(1, 51)]
    # centre y = 0.1 k, footprint top edge at 0.1 k + 1 touches y = 2.0 at k = 10
    assert geo.lamt(traj, box, [(-100, 2.0), (100, 2.0)]) == pytest.approx(1.0)


def test_lamt_skips_invalid_frames_and_handles_none():
    box = BoundingBox2D(4.0, 2.0)
    traj = [FrameState(k / 10, 0.0, 0.1 * k, 0.0, 0.0, valid=k != 10) for k in range(1, 51)]
    assert geo.lamt(traj, box, [(-100, 2.0), (100, 2.0)]) == pytest.approx(1.1)
    assert geo.lamt(traj, box, [(-100, 20.0), (100, 20.0)]) is None
    with pytest.raises(ValueError):
        geo.lamt([], box, [(0, 0), (1, 0)])


def edge_crossing(fp: geo.OrientedFootprint, poly) -> bool:
    """Scalar reference: some footprint edge meets some segment, or a vertex lies inside."""
    c = [tuple(p) for p in fp.corners]
    for a, b in zip(poly[:-1], poly[1:]):
        for i in range(4):
            if geo.segments_intersect(c[i], c[(i + 1) % 4], a, b):
                return True
    v = poly[0]
    return all(geo._orient(c[i], c[(i + 1) % 4], v) > 0 for i in range(4))


def test_lamt_matches_scalar_edge_test():
    rng = np.random.default_rng(3)
    box = BoundingBox2D(4.5, 1.9)
    poly = np.array([(-50.0, 1.0), (0.0, 1.5), (60.0, 0.8)])
    for _ in range(300):
        y0, vy = rng.uniform(-4, -1), rng.uniform(0, 1.5)
        h = rng.uniform(-0.2, 0.2)
        traj = [FrameState(k / 10, 2.0 * k / 10, y0 + vy * k / 10, h, 2.0) for k in range(1, 51)]
        scalar = next((f.t for f in traj if edge_crossing(geo.footprint_at(f, box), poly)), None)
        assert geo.lamt(traj, box, poly) == scalar


@given(st.floats(-20, 20), st.floats(-4, 15))
def test_scalar_and_vector_lane_lookup_agree(x, y):
    lanes = straight_lanes(y0=0.0)
    lane = geo.lane_of((x, y), lanes)
    assert (-1 if lane is None else lane) == geo.lane_of_points([(x, y)], lanes)[0]


def test_project_points_offsets_and_arclength():
    poly = [(0, 0), (10, 0), (10, 10)]
    pr = geo.project_points([(5, 1), (11, 5), (-2, -1)], poly)
    np.testing.assert_allclose(pr.s, [5, 15, -2])
    np.testing.assert_allclose(pr.d, [1, -1, -1])


def test_lane_lookup_straight_road():
    lanes = straight_lanes(y0=0.0)
    assert geo.lane_of((0.0, 0.0), lanes) == 0
    assert geo.lane_of((10.0, W + 1.0), lanes) == 1
    assert geo.lane_of((10.0, 2 * W + 1.8), lanes) == 2
    assert geo.lane_of((10.0, -3.0), lanes) is None
    np.testing.assert_array_equal(geo.lane_of_points([(0, 0), (0, 2 * W), (0, 99)], lanes), [0, 2, -1])


def test_adjacent_lane_and_shared_boundary():
    lanes = straight_lanes(y0=0.0)
    assert geo.adjacent_lane(lanes, 1, "left", (0, W)) == 2
    assert geo.adjacent_lane(lanes, 1, "right", (0, W)) == 0
    assert geo.adjacent_lane(lanes, 0, "right", (0, 0)) is None
    np.testing.assert_allclose(geo.shared_boundary(lanes, 0, 1)[:, 1], 0.5 * W)
    assert geo.shared_boundary(lanes, 0, 2) is None


def test_select_target_follows_drift_and_falls_back_to_nearer():
    lanes = straight_lanes(y0=0.0)
    start = FrameState(0.0, 0.0, W + 0.4, 0.0, 20.0)
    drift_right = [FrameState(0.1 * k, 2.0 * k, W + 0.4 - 0.05 * k, 0.0, 20.0) for k in range(1, 51)]
    tb = geo.select_target(start, lanes, drift_right)
    assert (tb.side, tb.lane) == ("right", 1)
    np.testing.assert_allclose(tb.points[:, 1], 0.5 * W)
    still = [FrameState(0.1 * k, 2.0 * k, W + 0.4 + 0.001 * k, 0.0, 20.0) for k in range(1, 51)]
    assert geo.select_target(start, lanes, still).side == "left"  # nearer boundary
    assert geo.select_target(start, lanes).side == "left"
    with pytest.raises(ValueError):
        geo.select_target(FrameState(0.0, 0.0, -9.0, 0.0, 1.0), lanes)


@given(st.floats(-math.pi, math.pi), coords, coords)
def test_lamt_rigid_invariance(rot, dx, dy):
    box = BoundingBox2D(4.5, 1.9)
    traj = [FrameState(k / 10, 2.5 * k / 10, -3.0 + 0.09 * k, 0.05, 2.5) for k in range(1, 51)]
    poly = np.array([(-50.0, 0.0), (0.0, 0.0), (80.0, 0.4)])
    moved = []
    for f in traj:
        (x, y), = geo.rigid([(f.x, f.y)], rot, dx, dy)
        moved.append(FrameState(f.t, x, y, f.heading + rot, f.speed))
    t0 = geo.lamt(traj, box, poly)
    t1 = geo.lamt(moved, box, geo.rigid(poly, rot, dx, dy))
    assert t0 is not None and t1 == pytest.approx(t0)


def test_grouped_projection_matches_per_polyline():
    rng = np.random.default_rng(21)
    for _ in range(200):
        polys = [np.cumsum(rng.uniform(-5, 5, size=(int(rng.integers(2, 7)), 2)), axis=0) for _ in range(int(rng.integers(1, 5)))]
        pts = rng.uniform(-15, 15, size=(int(rng.integers(1, 9)), 2))
        near, d = geo._project_groups(pts, polys)
        for m, poly in enumerate(polys):
            pr = geo.project_points(pts, poly)
            np.testing.assert_allclose(near[:, m], pr.nearest, atol=1e-12)
            np.testing.assert_allclose(d[:, m], pr.d, atol=1e-12)

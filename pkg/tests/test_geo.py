import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from zoomloc.errors import EmptyEvalSet, InvalidAction, OutOfAOI
from zoomloc.geo import (EARTH_RADIUS_M, GeoPoint, LocalPoint, PyramidConfig, Rect, actions_from_leaf_index,
                         decode_actions, encode_location, encode_locations, geo_from_local, geodesic_distance,
                         leaf_index, local_from_geo, recall_at, recall_from_distances, tile_bounds)

CFG = PyramidConfig()


def oracle_encode(u, v, K, N, side):
    """Exact rational floor arithmetic, one level at a time."""
    u, v, side = Fraction(u), Fraction(v), Fraction(side)
    out = []
    for _ in range(N):
        side /= K
        col, row = int(u // side), int(v // side)
        out.append(row * K + col)
        u -= col * side
        v -= row * side
    return out


def oracle_distance(lat1, lon1, lat2, lon2):
    """Spherical distance via the chord length of 3-D unit vectors."""
    def xyz(lat, lon):
        a, b = math.radians(lat), math.radians(lon)
        return np.array([math.cos(a) * math.cos(b), math.cos(a) * math.sin(b), math.sin(a)])
    c = np.linalg.norm(xyz(lat1, lon1) - xyz(lat2, lon2))
    return 2 * EARTH_RADIUS_M * math.asin(min(1.0, c / 2))


class TestPyramid:
    def test_default_footprints(self):
        assert [CFG.level_side(t) for t in range(4)] == [10000.0, 2500.0, 625.0, 156.25]
        assert CFG.terminal_cell_side == 39.0625
        assert CFG.num_actions == 16

    def test_leaf_count_is_k_pow_2n(self):
        assert CFG.num_leaves == 4 ** 8
        assert PyramidConfig(num_steps=3, aoi_side=2000.0).num_leaves == 4096

    def test_roundtrip_dict(self):
        assert PyramidConfig.from_dict(CFG.to_dict()) == CFG


class TestProjection:
    def test_origin_maps_to_zero(self):
        p = local_from_geo(CFG.aoi_origin, CFG)
        assert (p.u, p.v) == (0.0, 0.0)

    def test_one_degree_east_at_equator(self):
        cfg = PyramidConfig(aoi_origin=GeoPoint(0.0, 0.0), aoi_side=200000.0)
        p = local_from_geo(GeoPoint(0.0, 1.0), cfg)
        assert p.u == pytest.approx(2 * math.pi * EARTH_RADIUS_M / 360, abs=1e-6)
        assert p.u == pytest.approx(111194.93, abs=0.01)

    def test_hundred_meters_south(self):
        o = CFG.aoi_origin
        south = GeoPoint(o.latitude - 100.0 / (math.pi / 180 * EARTH_RADIUS_M), o.longitude)
        p = local_from_geo(south, CFG)
        assert abs(p.u) < 0.01 and p.v == pytest.approx(100.0, abs=0.01)

    def test_outside_aoi(self):
        with pytest.raises(OutOfAOI):
            local_from_geo(GeoPoint(CFG.aoi_origin.latitude + 0.01, CFG.aoi_origin.longitude), CFG)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(0, 19999.999), st.floats(0, 19999.999))
    def test_roundtrip_1e6(self, u, v):
        cfg = PyramidConfig(aoi_side=20000.0)
        back = local_from_geo(geo_from_local(LocalPoint(u, v), cfg), cfg, check=False)
        assert abs(back.u - u) < 1e-6 and abs(back.v - v) < 1e-6


class TestCodec:
    @pytest.mark.parametrize("u,v,expected", [
        (0.5, 0.5, [0, 0, 0, 0]),
        (5000, 5000, [10, 0, 0, 0]),
        (9999.9, 9999.9, [15, 15, 15, 15]),
    ])
    def test_examples(self, u, v, expected):
        assert encode_location(LocalPoint(u, v), CFG) == expected
        assert encode_location(LocalPoint(u, v), CFG) == oracle_encode(u, v, 4, 4, 10000)

    def test_decode_examples(self):
        c = decode_actions([0, 0, 0, 0], CFG)
        assert c.tile == Rect(0, 0, 39.0625, 39.0625)
        assert (c.local_center.u, c.local_center.v) == (19.53125, 19.53125)
        c = decode_actions([10, 0, 0, 0], CFG)
        assert c.tile == Rect(5000, 5000, 5039.0625, 5039.0625)
        assert c.bounds == c.tile  # terminal fraction 1 at defaults

    def test_terminal_fraction(self):
        cfg = PyramidConfig(terminal_center_fraction=0.25)
        c = decode_actions([0, 0, 0, 0], cfg)
        assert c.bounds.side == pytest.approx(39.0625 / 4)
        assert c.bounds.center == c.tile.center

    def test_tile_bounds_examples(self):
        assert tile_bounds([], CFG) == Rect(0, 0, 10000, 10000)
        assert tile_bounds([0], CFG) == Rect(0, 0, 2500, 2500)
        assert tile_bounds([15, 15], CFG) == Rect(9375, 9375, 10000, 10000)
        assert tile_bounds([15, 15], CFG).side == 625

    def test_invalid_action(self):
        with pytest.raises(InvalidAction):
            decode_actions([16, 0, 0, 0], CFG)
        with pytest.raises(InvalidAction):
            tile_bounds([0, -1], CFG)
        with pytest.raises(InvalidAction):
            decode_actions([0, 0, 0], CFG)

    def test_out_of_aoi(self):
        for p in (LocalPoint(-0.1, 5), LocalPoint(10000, 5), LocalPoint(5, 10000)):
            with pytest.raises(OutOfAOI):
                encode_location(p, CFG)

    def test_internal_boundary_goes_to_higher_tile(self):
        assert encode_location(LocalPoint(2500.0, 0.0), CFG)[0] == 1
        assert encode_location(LocalPoint(0.0, 2500.0), CFG)[0] == 4

    def test_vectorized_matches_rational_oracle(self, rng):
        u = rng.uniform(0, 10000, 2000)
        v = rng.uniform(0, 10000, 2000)
        got = encode_locations(u, v, CFG)
        for i in range(len(u)):
            assert got[i].tolist() == oracle_encode(u[i], v[i], 4, 4, 10000)

    def test_leaf_index_bijection(self):
        cfg = PyramidConfig(branching=3, num_steps=2, aoi_side=900.0)
        seen = set()
        for j in range(cfg.num_leaves):
            a = actions_from_leaf_index(j, cfg)
            assert leaf_index(a, cfg) == j
            r = tile_bounds(a, cfg)
            assert (r.u0, r.v0) == ((j % 9) * 100.0, (j // 9) * 100.0)
            seen.add(tuple(a))
        assert len(seen) == cfg.num_leaves


class TestNesting:
    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.integers(0, 15), min_size=0, max_size=3), st.integers(0, 15))
    def test_child_inside_parent(self, path, a):
        parent = tile_bounds(path, CFG)
        child = tile_bounds(path + [a], CFG)
        assert parent.contains_rect(child)
        assert child.side == parent.side / 4

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.integers(0, 15), min_size=0, max_size=3))
    def test_children_partition_parent(self, path):
        parent = tile_bounds(path, CFG)
        kids = [tile_bounds(path + [a], CFG) for a in range(16)]
        for i in range(16):
            for j in range(i + 1, 16):
                assert not kids[i].intersects(kids[j])
        assert sum(k.side ** 2 for k in kids) == parent.side ** 2
        assert min(k.u0 for k in kids) == parent.u0 and max(k.u1 for k in kids) == parent.u1
        assert min(k.v0 for k in kids) == parent.v0 and max(k.v1 for k in kids) == parent.v1

    @settings(max_examples=200, deadline=None)
    @given(st.floats(0, 9999.999), st.floats(0, 9999.999))
    def test_piecewise_constant(self, u, v):
        a = encode_location(LocalPoint(u, v), CFG)
        tile = decode_actions(a, CFG).tile
        assert tile.contains(LocalPoint(u, v))
        other = LocalPoint(tile.u0 + 0.37 * tile.side, tile.v0 + 0.81 * tile.side)
        assert encode_location(other, CFG) == a


class TestDistance:
    def test_identity(self):
        p = GeoPoint(38.9, -77.05)
        assert geodesic_distance(p, p) == 0.0

    def test_one_degree_equator(self):
        d = geodesic_distance(GeoPoint(0, 0), GeoPoint(0, 1))
        assert d == pytest.approx(2 * math.pi * EARTH_RADIUS_M / 360, abs=1e-6)

    def test_matches_chord_oracle(self, rng):
        for _ in range(500):
            a = GeoPoint(rng.uniform(-80, 80), rng.uniform(-180, 180))
            b = GeoPoint(rng.uniform(-80, 80), rng.uniform(-180, 180))
            assert geodesic_distance(a, b) == pytest.approx(oracle_distance(a.latitude, a.longitude,
                                                                            b.latitude, b.longitude), rel=1e-9)

    def test_metric_properties(self, rng):
        pts = [GeoPoint(rng.uniform(38, 40), rng.uniform(-78, -76)) for _ in range(3000)]
        for i in range(1000):
            a, b, c = pts[3 * i:3 * i + 3]
            ab = geodesic_distance(a, b)
            assert ab == geodesic_distance(b, a) and ab >= 0
            assert geodesic_distance(a, c) <= ab + geodesic_distance(b, c) + 1e-9

    def test_monotone_in_latitude(self):
        base = GeoPoint(38.95, -77.1)
        ds = [geodesic_distance(base, GeoPoint(38.95 + k * 1e-5, -77.1)) for k in range(1, 50)]
        assert all(x < y for x, y in zip(ds, ds[1:]))


class TestRecall:
    def test_all_exact(self):
        pts = [GeoPoint(38.9, -77.0 + i * 1e-3) for i in range(5)]
        assert recall_at(pts, pts, 0.0) == 100.0

    def test_example_distances(self):
        assert recall_from_distances([10, 45, 60, 120], 50) == 50.0

    def test_inclusive_boundary(self):
        assert recall_from_distances([50.0], 50.0) == 100.0

    def test_empty(self):
        with pytest.raises(EmptyEvalSet):
            recall_at([], [], 10)

    def test_count_oracle(self, rng):
        gt = [GeoPoint(38.9 + rng.uniform(0, 0.01), -77 + rng.uniform(0, 0.01)) for _ in range(1000)]
        pred = [GeoPoint(38.9 + rng.uniform(0, 0.01), -77 + rng.uniform(0, 0.01)) for _ in range(1000)]
        for tau in (40, 50, 100, 500):
            n = sum(oracle_distance(p.latitude, p.longitude, g.latitude, g.longitude) <= tau
                    for p, g in zip(pred, gt))
            assert recall_at(pred, gt, tau) == n * 100.0 / 1000

    def test_monotone_and_infinite(self, rng):
        d = rng.uniform(0, 300, 200)
        r = [recall_from_distances(d, t) for t in (0, 40, 50, 100, 200)]
        assert r == sorted(r)
        assert recall_from_distances(d, math.inf) == 100.0

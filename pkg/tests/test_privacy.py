import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phenopipe.privacy import (M_PER_DEG, PoleProximity, hash_contact, hash_contacts, haversine_m,
                               obfuscate_gps, project)


def test_hash_is_stable_and_salted():
    a, b = bytes(16), b"\x01" * 16
    assert hash_contact(a, "+6591234567") == hash_contact(a, "+6591234567")
    assert hash_contact(a, "+6591234567") != hash_contact(b, "+6591234567")
    assert len(hash_contact(a, "x")) == 16


def test_no_collisions_in_ten_thousand_contacts():
    tokens = hash_contacts(b"salt-salt-salt-1", [f"+65{8000_0000 + i}" for i in range(10_000)])
    assert len(set(tokens)) == 10_000


def test_zero_offset_is_identity():
    assert obfuscate_gps((0.0, 0.0), 1.3, 103.8) == (1.3, 103.8)


def test_east_offset_shifts_longitude_by_projection():
    lat, lon = obfuscate_gps((100.0, 0.0), 1.30, 103.80)
    assert lat == 1.30
    assert lon - 103.80 == pytest.approx(100 / (111_320 * math.cos(math.radians(1.30))), rel=1e-12)


def test_kilometre_pair_keeps_its_distance():
    lat1, lon1 = 1.30, 103.80
    lat2 = lat1 + 1000 / M_PER_DEG
    d0 = haversine_m(lat1, lon1, lat2, lon1)
    (a, b), (c, d) = (obfuscate_gps((3456.0, -789.0), lat, lon, ref_lat=1.35) for lat, lon in
                      ((lat1, lon1), (lat2, lon1)))
    assert haversine_m(a, b, c, d) == pytest.approx(d0, abs=1e-3)
    assert d0 == pytest.approx(1000.0, abs=5.0)


def test_pole_proximity_rejected():
    with pytest.raises(PoleProximity):
        obfuscate_gps((1.0, 1.0), np.array([86.0]), np.array([0.0]))


@settings(max_examples=100, deadline=None)
@given(st.floats(-20_000, 20_000), st.floats(-20_000, 20_000),
       st.lists(st.tuples(st.floats(1.0, 1.6), st.floats(103.5, 104.1)), min_size=2, max_size=8))
def test_planar_distances_preserved(dx, dy, pts):
    lat = np.array([p[0] for p in pts])
    lon = np.array([p[1] for p in pts])
    x0, y0 = project(lat, lon, 1.35)
    nlat, nlon = obfuscate_gps((dx, dy), lat, lon, ref_lat=1.35)
    x1, y1 = project(nlat, nlon, 1.35)
    d0 = np.hypot(x0[:, None] - x0[None], y0[:, None] - y0[None])
    d1 = np.hypot(x1[:, None] - x1[None], y1[:, None] - y1[None])
    assert np.allclose(d0, d1, atol=1e-6)

import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from hierion.geo import EARTH_RADIUS_KM, GeoError, GeoPoint, haversine_km, parse_point, within_radius

lons = st.floats(min_value=-180, max_value=180, allow_nan=False)
lats = st.floats(min_value=-90, max_value=90, allow_nan=False)


def test_zero_distance():
    p = GeoPoint(6.6, 46.5)
    assert haversine_km(p, p) == 0.0


def test_antipodal_is_half_circumference():
    a = GeoPoint(0, 0)
    b = GeoPoint(180, 0)
    assert haversine_km(a, b) == pytest.approx(math.pi * EARTH_RADIUS_KM, rel=1e-12)


def test_one_degree_longitude_at_equator():
    # arc length of 1 degree on the mean-radius sphere
    d = haversine_km(GeoPoint(0, 0), GeoPoint(1, 0))
    assert d == pytest.approx(2 * math.pi * EARTH_RADIUS_KM / 360.0, rel=1e-12)


def test_range_validation():
    with pytest.raises(GeoError):
        GeoPoint(200, 0)
    with pytest.raises(GeoError):
        GeoPoint(0, 91)


def test_negative_radius():
    p = GeoPoint(0, 0)
    with pytest.raises(GeoError):
        within_radius(p, p, -1)


def test_wkt_round_trip():
    p = GeoPoint(6.635227203369141, 46.52119378179781)
    assert parse_point(p.wkt()) == p


def test_parse_point_rejects_garbage():
    with pytest.raises(GeoError):
        parse_point("POLYGON(1 2)")


@given(lons, lats, lons, lats)
def test_symmetry(lon1, lat1, lon2, lat2):
    a, b = GeoPoint(lon1, lat1), GeoPoint(lon2, lat2)
    assert haversine_km(a, b) == pytest.approx(haversine_km(b, a), abs=1e-12)


@given(lons, lats, lons, lats)
def test_distance_bounded(lon1, lat1, lon2, lat2):
    d = haversine_km(GeoPoint(lon1, lat1), GeoPoint(lon2, lat2))
    assert 0 <= d <= math.pi * EARTH_RADIUS_KM + 1e-9

import pathlib
import random

import pytest

from hierion.geo import GeoPoint, haversine_km
from hierion.registry import Registry, SensorDescription, SSN_SENSOR

DATA = pathlib.Path(__file__).parent / "data"

# one line per acceptance criterion, echoed after the test summary so the
# gate is readable even without -s
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)

DISCOVERY_CENTER = GeoPoint(6.635227203369141, 46.52119378179781)
TEST_TYPE = "http://demo.org/ns#TestType"


@pytest.fixture
def discovery_query_text():
    return (DATA / "discovery.sparql").read_text()


@pytest.fixture
def service_xml():
    return (DATA / "service.xml").read_text()


def make_sensor(i, location, sensor_type=TEST_TYPE, owner="node-1"):
    return SensorDescription(
        id=f"http://demo.org/sensor/{i}",
        label=f"sensor {i}",
        sensor_type=sensor_type,
        type_parents=[SSN_SENSOR.value],
        observed_properties=["urn:hierion:property:temperature"],
        location=location,
        owner_node=owner,
    )


def seed_registry(n_inside=5, n_total=20, seed=3):
    """Registry with n_total sensors, exactly n_inside within the 15 km disc
    around the discovery center. Returns (registry, inside_ids)."""
    rng = random.Random(seed)
    reg = Registry()
    inside = []
    i = 0
    while i < n_total:
        want_inside = len(inside) < n_inside
        if want_inside:
            d = rng.uniform(0.01, 0.08)
        else:
            d = rng.uniform(0.4, 2.0)
        p = GeoPoint(DISCOVERY_CENTER.lon + d, DISCOVERY_CENTER.lat + d)
        actually_inside = haversine_km(p, DISCOVERY_CENTER) <= 15.0
        if actually_inside != want_inside:
            continue
        desc = make_sensor(i, p)
        reg.register_sensor(desc)
        if actually_inside:
            inside.append(desc.id)
        i += 1
    return reg, sorted(inside)

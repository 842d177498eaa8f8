import pytest

from hierion.aggregates import AnalyticOpSpec
from hierion.ingest import StreamTuple
from hierion.sdum import END_OF_STREAM, DeliveryManager, SdumError


def tuples(n, stream="urn:s/stream/t"):
    return [StreamTuple(stream, i * 1000, float(i)) for i in range(n)]


def drain(queue):
    out = []
    while not queue.empty():
        out.append(queue.get_nowait())
    return out


@pytest.fixture
def dm():
    manager = DeliveryManager()
    manager.open_service("svc", AnalyticOpSpec(kind="avg", window_tuples=10))
    return manager


class TestDelivery:
    def test_windows_reach_subscriber(self, dm):
        q = dm.deliver("svc")
        aggs = dm.feed("svc", tuples(25))
        assert len(aggs) == 3
        assert [a.count for a in drain(q)] == [10, 10, 5]

    def test_received_count(self, dm):
        dm.feed("svc", tuples(25))
        dm.feed("svc", tuples(5))
        assert dm.received_count("svc") == 30

    def test_two_subscribers_get_identical_streams(self, dm):
        q1, q2 = dm.deliver("svc"), dm.deliver("svc")
        dm.feed("svc", tuples(20))
        assert drain(q1) == drain(q2)

    def test_utility_counters(self, dm):
        dm.deliver("svc")
        dm.feed("svc", tuples(20), now_ms=5000)
        util = dm.get_utility("svc")
        assert util.tuples_delivered == 2
        assert util.bytes_delivered > 0
        assert util.first_delivery_ms == 5000

    def test_utility_counts_each_subscriber(self, dm):
        dm.deliver("svc")
        dm.deliver("svc")
        dm.feed("svc", tuples(10))
        assert dm.get_utility("svc").tuples_delivered == 2

    def test_unknown_service(self, dm):
        with pytest.raises(SdumError):
            dm.feed("nope", tuples(1))
        with pytest.raises(SdumError):
            dm.deliver("nope")


class TestStop:
    def test_stop_freezes_counters_and_signals_end(self, dm):
        q = dm.deliver("svc")
        dm.feed("svc", tuples(10))
        dm.stop("svc")
        frozen = dm.get_utility("svc")
        with pytest.raises(SdumError):
            dm.feed("svc", tuples(10))
        assert dm.get_utility("svc") == frozen
        items = drain(q)
        assert items[-1] is END_OF_STREAM
        assert len(items) == 2

    def test_stop_idempotent(self, dm):
        q = dm.deliver("svc")
        dm.stop("svc")
        dm.stop("svc")
        assert drain(q).count(END_OF_STREAM) == 1

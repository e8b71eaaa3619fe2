import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from swavdesk.feature_queue import FeatureQueue
from swavdesk.numerics import ShapeError


def rows(start, n, d=2):
    return np.arange(start, start + n, dtype=float)[:, None] * np.ones((1, d))


def test_enabled_boundary():
    q = FeatureQueue(2, capacity=8, start_epoch=15)
    assert not q.enabled(14)
    assert q.enabled(15)
    assert FeatureQueue(2, capacity=8, start_epoch=0).enabled(0)


def test_defaults():
    q = FeatureQueue(4)
    assert (q.capacity, q.start_epoch) == (3840, 15)


def test_assemble_empty_is_identity():
    z = rows(0, 3)
    aug, b = FeatureQueue(2, 8).assemble(z)
    np.testing.assert_array_equal(aug, z)
    assert b == 3


def test_assemble_reaches_4096_and_keeps_batch_first():
    q = FeatureQueue(3, capacity=3840)
    for i in range(15):
        q.push_batch(np.random.default_rng(i).normal(size=(256, 3)))
    z = np.random.default_rng(99).normal(size=(256, 3))
    aug, b = q.assemble(z)
    assert aug.shape == (4096, 3) and b == 256
    np.testing.assert_array_equal(aug[:256], z)


def test_capacity_four_push_six():
    q = FeatureQueue(2, capacity=4).push_batch(rows(0, 6))
    np.testing.assert_array_equal(q.contents(), rows(2, 4)[::-1])


def test_fifteen_batches_fill_and_sixteenth_evicts_first():
    q = FeatureQueue(1, capacity=3840)
    for i in range(15):
        q.push_batch(np.full((256, 1), float(i)))
    assert len(q) == 3840
    q.push_batch(np.full((256, 1), 15.0))
    assert len(q) == 3840
    assert 0.0 not in set(q.contents()[:, 0])
    assert set(q.contents()[:, 0]) == set(float(i) for i in range(1, 16))


def test_push_empty_is_noop():
    q = FeatureQueue(2, capacity=4).push_batch(rows(0, 2))
    before = q.contents()
    q.push_batch(np.zeros((0, 2)))
    np.testing.assert_array_equal(q.contents(), before)


def test_dimension_mismatch():
    with pytest.raises(ShapeError):
        FeatureQueue(2, 4).assemble(np.ones((1, 3)))
    with pytest.raises(ShapeError):
        FeatureQueue(2, 4).push_batch(np.ones((1, 3)))


@settings(max_examples=80, deadline=None)
@given(st.integers(1, 12), st.lists(st.integers(0, 9), max_size=8))
def test_storage_is_suffix_of_push_stream(cap, sizes):
    q = FeatureQueue(1, capacity=cap)
    stream = []
    for n in sizes:
        batch = np.arange(len(stream), len(stream) + n, dtype=float)[:, None]
        stream.extend(batch[:, 0])
        q.push_batch(batch)
    expected = stream[len(stream) - min(len(stream), cap):]
    np.testing.assert_array_equal(q.contents()[::-1, 0], expected)
    snapshot = q.contents()
    q.assemble(np.ones((2, 1)))
    np.testing.assert_array_equal(q.contents(), snapshot)


def test_state_roundtrip():
    q = FeatureQueue(2, capacity=5).push_batch(rows(0, 7))
    q2 = FeatureQueue(2, capacity=5)
    q2.load_rows(q.state_arrays("queue.0")["queue.0.rows"])
    np.testing.assert_array_equal(q2.contents(), q.contents())
    q.push_batch(rows(10, 2))
    q2.push_batch(rows(10, 2))
    np.testing.assert_array_equal(q2.contents(), q.contents())

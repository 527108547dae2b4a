"""
Tests for src.shared.utils
"""

import hashlib

import numpy as np

from src.shared.utils import chunked, derive_seed, parallel_map, seed_stream, stream_key


def test_stream_key_follows_the_documented_derivation():
    digest = hashlib.sha256(b"7/test/scene/17/radar").digest()
    expected = (int.from_bytes(digest[:8], "little"), int.from_bytes(digest[8:16], "little"))
    assert stream_key(7, "test", "scene", 17, "radar") == expected


def test_streams_repeat_and_differ_by_label():
    first = seed_stream(1, "train", "scene", 0, "camera").random(5)
    again = seed_stream(1, "train", "scene", 0, "camera").random(5)
    other = seed_stream(1, "train", "scene", 1, "camera").random(5)
    np.testing.assert_array_equal(first, again)
    assert not np.array_equal(first, other)


def test_streams_do_not_depend_on_draw_order():
    seed_stream(1, "a").random(1000)
    late = seed_stream(1, "b").random(3)
    np.testing.assert_array_equal(late, seed_stream(1, "b").random(3))


def test_derived_seeds_are_non_negative_63_bit():
    for label in ("world", "radar", "boost"):
        value = derive_seed(5, label)
        assert 0 <= value < 2**63


def test_chunked_keeps_the_remainder():
    assert [list(c) for c in chunked(list(range(7)), 3)] == [[0, 1, 2], [3, 4, 5], [6]]


def test_parallel_map_preserves_order_for_any_thread_count():
    items = list(range(50))
    expected = [i * i for i in items]
    for threads in (1, 2, 7):
        assert parallel_map(lambda i: i * i, items, threads=threads) == expected

import pytest

from src.services.intervals import IntervalSet


def test_add_coalesces_overlapping_and_adjacent():
    journal = IntervalSet()
    journal.add(6, 13)
    journal.add(1, 8)
    assert journal.ranges() == [(1, 13)]
    journal.add(14, 20)
    assert journal.ranges() == [(1, 20)]


def test_adjacent_kept_apart_without_coalescing():
    journal = IntervalSet(coalesce_adjacent=False)
    journal.add(1, 5)
    journal.add(6, 9)
    assert journal.ranges() == [(1, 5), (6, 9)]
    journal.add(5, 6)
    assert journal.ranges() == [(1, 9)]


def test_add_absorbs_many():
    journal = IntervalSet()
    for lo in range(0, 100, 10):
        journal.add(lo, lo + 2)
    journal.add(5, 71)
    assert journal.ranges() == [(0, 2), (5, 72), (80, 82), (90, 92)]


def test_inverted_interval_rejected():
    with pytest.raises(ValueError):
        IntervalSet().add(5, 4)


def test_covers_and_uncovered():
    journal = IntervalSet()
    journal.add(10, 20)
    journal.add(30, 40)
    assert journal.covers(10) and journal.covers(40)
    assert not journal.covers(25)
    assert journal.covers_range(12, 18)
    assert not journal.covers_range(15, 35)
    assert journal.uncovered(0, 50) == [(0, 9), (21, 29), (41, 50)]
    assert journal.uncovered(12, 18) == []
    assert journal.overlapping(15, 35) == [(10, 20), (30, 40)]
    assert journal.total_length() == 22


def test_from_sorted_keys_builds_maximal_runs():
    journal = IntervalSet.from_sorted_keys([1, 2, 3, 4, 5, 6, 9, 11, 12, 13])
    assert journal.ranges() == [(1, 6), (9, 9), (11, 13)]
    assert not IntervalSet.from_sorted_keys([])

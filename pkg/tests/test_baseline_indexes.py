import numpy as np
import pytest

from src.models.entry import Entry
from src.services.baseline_indexes import (
    NO_PARTITION, PartitionedBTree, SBTree, UBTree, build_index,
)
from src.services.bbtree import BBTree, TreeConfig
from src.services.pcm_device import DeviceConfig, SimDevice
from tests.conftest import keys_of


def fresh_device():
    return SimDevice(DeviceConfig(capacity_bytes=4 * 1024 * 1024))


def test_build_index_by_name(device):
    assert isinstance(build_index('bb', device), BBTree)
    assert isinstance(build_index('sb', device), SBTree)
    assert isinstance(build_index('ub', device), UBTree)
    with pytest.raises(ValueError):
        build_index('lsm', device)


def test_ub_leaves_have_no_sorted_section(device, small_tree):
    tree = UBTree(device, small_tree)
    tree.bulk_insert([Entry(k, k) for k in range(6)])
    leaf = tree.main.head
    assert leaf.valid_sorted_slots() == []
    assert len(leaf.valid_unsorted_slots()) == 6


def test_ub_delete_flushes_one_line(device, small_tree):
    tree = UBTree(device, small_tree)
    tree.bulk_insert([Entry(k, k) for k in range(6)])
    before = device.line_flushes
    tree.delete(3)
    assert device.line_flushes - before == 1
    assert tree.point_search(3) is None


def test_sorted_section_reads_fewer_lines():
    entries = [Entry(k, k) for k in range(240)]
    reads = {}
    for cls in (SBTree, UBTree):
        device = fresh_device()
        tree = cls(device)
        tree.bulk_insert(entries)
        device.reset_stats()
        for key in range(5, 240, 24):
            assert tree.point_search(key) == Entry(key, key)
        reads[cls.kind] = device.reads
    assert reads['sb'] < reads['ub']


def test_unbuffered_insert_hits_pcm_immediately(device, small_tree):
    tree = SBTree(device, small_tree)
    before = device.line_flushes
    tree.insert(Entry(5, 5))
    assert device.line_flushes > before


@pytest.mark.parametrize('cls', [SBTree, UBTree])
def test_random_trace_matches_oracle(cls, small_tree):
    device = fresh_device()
    tree = cls(device, small_tree)
    rng = np.random.default_rng(11)
    oracle = {}
    for rid in range(1, 800):
        key = int(rng.integers(0, 150))
        if rng.random() < 0.6:
            tree.insert(Entry(key, rid))
            oracle.setdefault(key, []).append(rid)
        else:
            tree.delete(key)
            oracle.pop(key, None)
    expected = sorted((k, r) for k, rids in oracle.items() for r in rids)
    assert [e.sort_key for e in tree.scan_all()] == expected
    lo, hi = 40, 90
    assert [e.sort_key for e in tree.range_search(lo, hi)] == [p for p in expected if lo <= p[0] <= hi]
    assert tree.verify() == []


def test_partitioned_btree_keeps_partition_ids(device):
    pbt = PartitionedBTree(device)
    for key in range(10, 40):
        pbt.insert(key, key * 2, pid=key % 3)
    pbt.insert(5, 5)
    found = pbt.range_search(5, 12)
    assert keys_of(found) == [5, 10, 11, 12]
    assert found[0].pid == NO_PARTITION
    assert [e.pid for e in found[1:]] == [1, 2, 0]
    assert found[1].plain() == Entry(10, 20)
    pbt.delete(11)
    assert keys_of(pbt.range_search(5, 12)) == [5, 10, 12]
    assert pbt.verify() == []


def test_sorted_leaf_shifts_on_insert():
    shifted = fresh_device()
    pbt = PartitionedBTree(shifted)
    for key in range(10, 22):
        pbt.insert(key, key)
    before = shifted.line_flushes
    pbt.insert(1, 1)
    pbt_cost = shifted.line_flushes - before

    appended = fresh_device()
    ub = UBTree(appended, TreeConfig(leaf_fanout=16, sorted_slots=0, fill_slots=12))
    for key in range(10, 22):
        ub.insert(Entry(key, key))
    before = appended.line_flushes
    ub.insert(Entry(1, 1))
    ub_cost = appended.line_flushes - before

    assert pbt_cost >= 7
    assert ub_cost == 2
    assert pbt_cost > ub_cost

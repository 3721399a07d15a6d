import numpy as np
import pytest

from src.models.entry import Entry, tombstone
from src.services.bbtree import BBTree, BufferTree, MainIndex, TreeConfig
from tests.conftest import keys_of


def leaf_keys(tree):
    return [sorted(e.key for e in leaf.valid_entries()) for leaf in tree.main.leaves()]


def put_all(tree, keys):
    for key in keys:
        tree.insert(Entry(key, key))


def test_tree_config_validation():
    with pytest.raises(ValueError):
        TreeConfig(leaf_fanout=1)
    with pytest.raises(ValueError):
        TreeConfig(sorted_slots=40)
    with pytest.raises(ValueError):
        TreeConfig(fill_slots=8)
    assert TreeConfig().min_fill == 16


def test_misaligned_sections_rejected(device):
    with pytest.raises(ValueError):
        MainIndex(device, TreeConfig(sorted_slots=25, fill_slots=24))


def test_buffer_last_writer_wins():
    buffer = BufferTree(threshold=10)
    buffer.put(Entry(7, 1))
    buffer.put(tombstone(7))
    assert len(buffer) == 1
    assert buffer.get(7).purge
    assert buffer.drain() == [tombstone(7)]


def test_search_on_empty_tree(device):
    tree = BBTree(device)
    assert tree.range_search(0, 100) == []
    assert tree.point_search(5) is None


def test_empty_flush_writes_nothing(device):
    tree = BBTree(device)
    before = device.line_flushes
    tree.flush_buffer()
    assert device.line_flushes == before
    assert tree.flushes == 0


def test_slice_entries_half_open():
    keys = [(5, 5), (10 ** 30, 0)]
    slices = MainIndex.slice_entries([Entry(1, 1), Entry(6, 6), Entry(8, 8)], keys)
    assert [keys_of(s) for s in slices] == [[1], [6, 8]]


def test_tombstone_sliced_to_every_intersecting_child():
    keys = [(3, 3), (3, 9), (10 ** 30, 0)]
    slices = MainIndex.slice_entries([tombstone(3)], keys)
    assert [len(s) for s in slices] == [1, 1, 1]


def test_chunk_respects_fill_and_minimum(device, small_tree):
    main = MainIndex(device, small_tree)
    entries = [Entry(k, k) for k in range(13)]
    sizes = [len(c) for c in main.chunk(entries)]
    assert sum(sizes) == 13
    assert all(small_tree.min_fill <= s <= small_tree.leaf_fanout for s in sizes)
    assert sizes == sorted(sizes)


def test_index_modification_walkthrough(device, walkthrough_tree):
    tree = BBTree(device, walkthrough_tree)

    # Lote de sete entradas: flush automático no threshold
    put_all(tree, [1, 3, 5, 7, 9, 11, 13])
    assert len(tree.buffer) == 0
    assert tree.flushes == 1
    assert tree.main.height() == 2
    assert leaf_keys(tree) == [[1, 3], [5, 7], [9, 11, 13]]
    assert all(not leaf.valid_unsorted_slots() for leaf in tree.main.leaves())

    # Duas inserções e duas remoções
    tree.insert(Entry(6, 6))
    tree.insert(Entry(8, 8))
    tree.delete(3)
    tree.delete(13)
    tree.flush_buffer()
    assert tree.main.counters['merges'] >= 1
    assert sorted(k for keys in leaf_keys(tree) for k in keys) == [1, 5, 6, 7, 8, 9, 11]
    assert 'invalid=[13]' in tree.dump()
    assert tree.verify() == []

    put_all(tree, [10, 14])
    tree.flush_buffer()
    assert tree.point_search(13) is None
    assert tree.point_search(14) == Entry(14, 14)
    assert keys_of(tree.range_search(0, 100)) == [1, 5, 6, 7, 8, 9, 10, 11, 14]
    assert tree.verify() == []


def test_leaf_gap_fill_order(device, walkthrough_tree):
    main = MainIndex(device, walkthrough_tree)
    main.bulkload(main.root, [Entry(9, 9), Entry(11, 11), Entry(13, 13)])
    main.bulkload(main.root, [tombstone(13)])
    leaf = main.head
    assert leaf.describe() == "leaf 1 sorted=[9, 11] unsorted=[] invalid=[13]"

    # 10 vai para a área não ordenada; 14 ocupa a lacuna deixada por 13
    main.leaf_insert(leaf, [Entry(10, 10)])
    assert leaf.describe() == "leaf 1 sorted=[9, 11] unsorted=[10] invalid=[13]"
    main.leaf_insert(leaf, [Entry(14, 14)])
    assert leaf.describe() == "leaf 1 sorted=[9, 11, 14] unsorted=[10] invalid=[]"
    assert main.verify() == []


def test_invalidation_touches_only_bitmap_line(device, small_tree):
    main = MainIndex(device, small_tree)
    main.bulkload(main.root, [Entry(k, k) for k in range(6)])
    before = device.line_flushes
    main.bulkload(main.root, [tombstone(2)])
    assert device.line_flushes - before == 1
    assert main.point_search(2) is None


def test_absent_delete_is_counted_noop(device, small_tree):
    tree = BBTree(device, small_tree)
    put_all(tree, range(10))
    tree.flush_buffer()
    tree.delete(99)
    tree.flush_buffer()
    assert tree.main.counters['absent_deletes'] == 1
    assert len(tree.range_search(0, 100)) == 10


def test_duplicates_are_kept(device, small_tree):
    tree = BBTree(device, small_tree)
    tree.insert(Entry(26, 19))
    tree.insert(Entry(26, 2))
    assert tree.range_search(26, 26) == [Entry(26, 2), Entry(26, 19)]
    tree.flush_buffer()
    assert tree.point_search(26) == Entry(26, 2)
    tree.insert(Entry(26, 1))
    assert tree.point_search(26) == Entry(26, 1)
    tree.delete(26)
    assert tree.range_search(26, 26) == []


def test_buffered_operations_visible_before_flush(device, small_tree):
    tree = BBTree(device, small_tree)
    put_all(tree, range(0, 40, 2))
    tree.flush_buffer()
    tree.delete(4)
    tree.insert(Entry(5, 5))
    assert keys_of(tree.range_search(2, 6)) == [2, 5, 6]
    assert len(tree.buffer) == 2


@pytest.mark.parametrize('seed', [1, 2, 3])
def test_random_trace_matches_oracle(device, small_tree, seed):
    rng = np.random.default_rng(seed)
    tree = BBTree(device, small_tree)
    oracle = {}
    rid = 0
    for step in range(1500):
        key = int(rng.integers(0, 300))
        action = rng.random()
        if action < 0.55:
            rid += 1
            tree.insert(Entry(key, rid))
            oracle.setdefault(key, []).append(rid)
        elif action < 0.85:
            tree.delete(key)
            oracle.pop(key, None)
        else:
            lo = int(rng.integers(0, 300))
            hi = lo + int(rng.integers(0, 40))
            expected = sorted((k, r) for k, rids in oracle.items() if lo <= k <= hi for r in rids)
            assert [e.sort_key for e in tree.range_search(lo, hi)] == expected
    tree.flush_buffer()
    expected = sorted((k, r) for k, rids in oracle.items() for r in rids)
    assert [e.sort_key for e in tree.scan_all()] == expected
    assert tree.verify() == []


def test_recover_rebuilds_inner_nodes_from_leaves(device, small_tree):
    tree = BBTree(device, small_tree)
    put_all(tree, range(200))
    tree.flush_buffer()
    for key in range(0, 200, 3):
        tree.delete(key)
    tree.flush_buffer()
    before = list(tree.scan_all())

    tree.crash()
    assert tree.main.root is None
    tree.recover()
    assert list(tree.scan_all()) == before
    assert tree.range_search(50, 60) == [e for e in before if 50 <= e.key <= 60]
    assert tree.verify() == []

    put_all(tree, [1000, 1001])
    tree.flush_buffer()
    assert tree.point_search(1001) == Entry(1001, 1001)


def test_inner_nodes_split_and_merge(device, small_tree):
    tree = BBTree(device, small_tree)
    put_all(tree, range(300))
    tree.flush_buffer()
    assert tree.main.height() >= 3
    assert tree.main.counters['inner_splits'] >= 1
    for key in range(300):
        if key % 10:
            tree.delete(key)
    tree.flush_buffer()
    assert keys_of(tree.scan_all()) == list(range(0, 300, 10))
    assert tree.verify() == []


@pytest.mark.parametrize('geometry', ['default', 'small'])
def test_large_delete_batch_leaves_no_survivors(device, small_tree, geometry):
    tree = BBTree(device, TreeConfig() if geometry == 'default' else small_tree)
    put_all(tree, range(5000))
    tree.flush_buffer()
    for key in range(5000):
        if key % 7:
            tree.delete(key)
    tree.flush_buffer()
    assert keys_of(tree.range_search(0, 4999)) == list(range(0, 5000, 7))
    assert tree.point_search(69) is None
    assert tree.main.counters['absent_deletes'] == 0
    assert tree.verify() == []

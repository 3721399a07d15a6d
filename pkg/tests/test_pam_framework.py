import numpy as np
import pytest

from src.models.entry import Entry
from src.services.bbtree import TreeConfig
from src.services.pam_framework import (
    DeletionJournal, EntryLog, FrameworkConfig, InsertionJournal, InvalidRangeError,
    PAMFramework, build_partitions,
)
from src.services.pcm_device import DeviceConfig, SimDevice
from src.services.workload_gen import make_dataset
from tests.conftest import keys_of, letter_key as k


@pytest.fixture
def pam(device, walkthrough_dataset):
    framework = PAMFramework(device, 'bb', FrameworkConfig(partition_capacity=5))
    framework.initialize(walkthrough_dataset)
    return framework


def test_dataset_split_into_sorted_partitions(device, walkthrough_dataset):
    parts = build_partitions(device, walkthrough_dataset, 5)
    assert len(parts) == 4
    assert [list(map(int, p.keys)) for p in parts] == [
        [k('b'), k('e'), k('i'), k('s'), k('z')],
        [k('a'), k('c'), k('k'), k('q'), k('u')],
        [k('d'), k('l'), k('n'), k('p'), k('x')],
        [k('f'), k('m'), k('r'), k('t'), k('z')],
    ]


def test_search_merges_partitions_into_index(pam):
    result = pam.search(k('f'), k('m'))
    assert keys_of(result) == [k(c) for c in 'fiklm']
    assert pam.ijournal.ranges() == [(k('f'), k('m'))]
    assert keys_of(pam.index.range_search(0, 30)) == [k(c) for c in 'fiklm']

    fourth = pam.partitions.get(3)
    live_before = fourth.live_count
    first_before = fourth.first

    result = pam.search(k('a'), k('h'))
    assert keys_of(result) == [k(c) for c in 'abcdef']
    assert pam.ijournal.ranges() == [(k('a'), k('m'))]
    assert fourth.live_count == live_before
    assert fourth.first == first_before
    assert [p.live_count for p in pam.partitions] == [2, 2, 3, 3]


def test_delete_range_records_partition_deletions(pam):
    pam.search(k('f'), k('m'))
    pam.search(k('a'), k('h'))
    pam.delete_range(k('r'), k('t'))
    assert {k('r'), k('t')} <= set(pam.djournal.keys())
    fourth = pam.partitions.get(3)
    assert [int(fourth.keys[pos]) for pos in range(fourth.first, fourth.last + 1)] == [k('z')]
    assert pam.search(k('r'), k('t')) == []
    assert pam.djournal.to_csv().splitlines()[0] == 'key'


def test_delete_of_merged_key_is_journaled(pam):
    pam.search(k('f'), k('m'))
    pam.delete(k('i'))
    assert k('i') in pam.djournal
    assert keys_of(pam.search(k('f'), k('m'))) == [k(c) for c in 'fklm']


def test_fresh_insert_delete_leaves_no_journal_record(pam):
    pam.insert(Entry(100, 1))
    assert keys_of(pam.index.range_search(90, 110)) == [100]
    pam.delete(100)
    assert 100 not in pam.djournal
    assert pam.search(90, 110) == []


def test_delete_after_covering_search_is_journaled(pam):
    pam.insert(Entry(100, 1))
    assert keys_of(pam.search(90, 110)) == [100]
    pam.delete(100)
    assert 100 in pam.djournal
    assert pam.search(90, 110) == []


def test_update_replaces_rid(pam):
    pam.search(k('f'), k('m'))
    pam.update(k('k'), 99)
    assert pam.search(k('k'), k('k')) == [Entry(k('k'), 99)]


def test_duplicate_keys_are_both_returned(pam):
    result = pam.search(k('z'), k('z'))
    assert result == [Entry(k('z'), 2), Entry(k('z'), 19)]


def test_inverted_range_rejected(pam):
    with pytest.raises(InvalidRangeError):
        pam.search(10, 5)
    with pytest.raises(ValueError):
        pam.delete_range(10, 5)


def test_covered_search_reads_no_partition_lines(pam, device):
    pam.search(k('f'), k('m'))
    device.reset_stats()
    pam.search(k('g'), k('l'))
    search_reads = device.reads
    device.reset_stats()
    pam.index.range_search(k('g'), k('l'))
    assert search_reads == device.reads


def test_partitions_are_never_written(pam, device):
    snapshot = {p.pid: (p.region.base, bytes(device.contents[p.region.base:p.region.end])) for p in pam.partitions}
    pam.search(k('f'), k('m'))
    pam.delete_range(k('r'), k('t'))
    pam.delete(k('b'))
    assert len(pam.partitions) > 0
    for part in pam.partitions:
        base, before = snapshot[part.pid]
        assert bytes(device.contents[base:base + len(before)]) == before


def test_convergence_frees_every_partition(pam):
    for lo, hi in [('f', 'm'), ('a', 'h'), ('n', 'q'), ('r', 'z')]:
        pam.search(k(lo), k(hi))
    assert pam.converged()
    assert pam.counters['partitions_freed'] == 4
    assert len(keys_of(pam.index.scan_all())) == 20


def test_crash_rebuilds_journal_from_index_runs(pam):
    pam.search(k('f'), k('m'))
    pam.search(k('a'), k('h'))
    before = pam.live_entries()
    pam.crash()
    pam.recover()
    assert pam.ijournal.ranges() == [(k('a'), k('f')), (k('i'), k('i')), (k('k'), k('m'))]
    assert pam.live_entries() == before
    assert pam.ijournal.to_csv().splitlines()[0] == 'lo,hi'


def test_crash_keeps_deletions_and_buffered_operations(pam):
    pam.search(k('f'), k('m'))
    pam.delete(k('i'))
    pam.delete(k('s'))
    pam.insert(Entry(50, 7))
    before = pam.live_entries()
    assert len(pam.log) == 2

    pam.crash()
    pam.recover()
    assert pam.live_entries() == before
    assert pam.search(k('i'), k('i')) == []
    assert pam.search(k('s'), k('s')) == []
    assert pam.search(50, 50) == [Entry(50, 7)]


@pytest.mark.parametrize('flushed', [False, True])
def test_recovery_keeps_unmerged_partition_copy_of_inserted_key(pam, flushed):
    pam.search(k('f'), k('m'))
    pam.insert(Entry(k('q'), 999))
    if flushed:
        pam.index.flush_buffer()
    expected = [Entry(k('q'), 8), Entry(k('q'), 999)]
    before = pam.live_entries()

    pam.crash()
    pam.recover()
    assert not pam.ijournal.covers(k('q'))
    assert pam.ijournal.ranges() == [(k('f'), k('f')), (k('i'), k('i')), (k('k'), k('m'))]
    assert pam.live_entries() == before
    assert pam.search(k('q'), k('q')) == expected


def test_full_entry_log_forces_flush(device, walkthrough_dataset):
    framework = PAMFramework(device, 'bb', FrameworkConfig(partition_capacity=5, entry_log_capacity=3))
    framework.initialize(walkthrough_dataset)
    for key in range(100, 104):
        framework.insert(Entry(key, key))
    assert framework.index.flushes == 1
    assert len(framework.log) == 1


@pytest.mark.parametrize('kind', ['sb', 'ub'])
def test_unbuffered_indexes_give_same_results(device, walkthrough_dataset, kind):
    framework = PAMFramework(device, kind, FrameworkConfig(partition_capacity=5))
    framework.initialize(walkthrough_dataset)
    assert framework.log is None
    assert keys_of(framework.search(k('f'), k('m'))) == [k(c) for c in 'fiklm']
    assert keys_of(framework.search(k('a'), k('h'))) == [k(c) for c in 'abcdef']
    framework.crash()
    framework.recover()
    assert framework.ijournal.ranges() == [(k('a'), k('f')), (k('i'), k('i')), (k('k'), k('m'))]


def test_deletion_journal_pages_survive_crash(device):
    journal = DeletionJournal(device, page_bytes=64)
    for key in [5, 9, 2, 40, 41, 7, 3]:
        journal.append(key)
    journal.append(9)
    assert len(journal.pages) == 3
    assert journal.write_cost_ns > 0
    journal.crash()
    assert len(journal) == 0
    journal.recover()
    assert journal.keys() == [5, 9, 2, 40, 41, 7, 3]


def test_deletion_journal_record_for_key_zero_survives_crash(device):
    journal = DeletionJournal(device, page_bytes=64)
    journal.append(0, copies=0)
    journal.append(4, copies=3)
    journal.crash()
    journal.recover()
    assert journal.keys() == [0, 4]



def test_entry_log_epochs(device):
    log = EntryLog(device, capacity=4)
    log.append(Entry(1, 1))
    log.append(Entry(2, 0, tombstone=True))
    log.crash()
    assert log.recover() == [Entry(1, 1), Entry(2, 0, tombstone=True)]
    log.truncate()
    log.append(Entry(3, 3))
    log.crash()
    assert log.recover() == [Entry(3, 3)]
    log.append(Entry(4, 4))
    log.append(Entry(5, 5))
    log.append(Entry(6, 6))
    with pytest.raises(OverflowError):
        log.append(Entry(7, 7))


def test_insertion_journal_rebuild_deduplicates():
    journal = InsertionJournal.rebuild([3, 1, 2, 2, 7])
    assert journal.ranges() == [(1, 3), (7, 7)]


def make_trace(seed, domain, length):
    rng = np.random.default_rng(seed)
    ops, fresh = [], domain
    for _ in range(length):
        roll = rng.random()
        if roll < 0.4:
            lo = int(rng.integers(0, domain))
            ops.append(('search', lo, lo + int(rng.integers(0, 30))))
        elif roll < 0.55:
            ops.append(('insert', fresh, int(rng.integers(0, 1000))))
            fresh += 1
        elif roll < 0.65:
            # rids acima de 10000 nunca coincidem com os do dataset
            ops.append(('insert', int(rng.integers(0, domain)), int(rng.integers(10000, 11000))))
        else:
            ops.append(('delete', int(rng.integers(0, fresh)), 0))
    return ops


def replay(trace, crash_at=()):
    device = SimDevice(DeviceConfig(capacity_bytes=8 * 1024 * 1024))
    tree = TreeConfig(leaf_fanout=8, inner_fanout=4, sorted_slots=4, fill_slots=6, buffer_threshold=16)
    framework = PAMFramework(device, 'bb', FrameworkConfig(partition_capacity=40, entry_log_capacity=24), tree)
    framework.initialize(make_dataset(300, seed=3))
    results = []
    for step, (op, a, b) in enumerate(trace):
        if step in crash_at:
            framework.crash()
            framework.recover()
        if op == 'search':
            results.append(framework.search(a, b))
        elif op == 'insert':
            framework.insert(Entry(a, b))
        else:
            framework.delete(a)
    return results, framework.live_entries()


@pytest.mark.parametrize('seed', [0, 1])
def test_random_crash_points_preserve_logical_state(seed):
    trace = make_trace(seed, 300, 250)
    expected_results, expected_live = replay(trace)
    rng = np.random.default_rng(seed + 100)
    for crash_point in rng.choice(np.arange(1, len(trace)), size=50, replace=False):
        results, live = replay(trace, crash_at={int(crash_point)})
        assert results == expected_results
        assert live == expected_live
    results, live = replay(trace, crash_at=set(range(10, 250, 25)))
    assert results == expected_results
    assert live == expected_live

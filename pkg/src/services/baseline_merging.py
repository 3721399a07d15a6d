from collections import defaultdict
from dataclasses import dataclass, asdict
from typing import Dict, Iterable, List, Optional
import logging

import numpy as np

from src.models.entry import Entry
from src.services.baseline_indexes import PartitionEntry, PartitionedBTree, UBTree
from src.services.bbtree import TreeConfig
from src.services.intervals import IntervalSet
from src.services.pam_framework import Partition, PartitionSet, build_partitions, check_range
from src.services.pcm_device import EMPTY_RECEIPT, LineReader, Region, SimDevice, WriteReceipt

# Configure logging
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

INVALIDATION_KINDS = ('flag', 'bitmap', 'journal')


@dataclass
class MergingConfig:
    """Parâmetros do AM / eAM"""
    partition_capacity: int = 65536
    memory_pool_capacity: int = 4096
    invalidation: str = 'bitmap'

    def __post_init__(self):
        if self.partition_capacity < 1:
            raise ValueError("partition_capacity deve ser positivo")
        if self.memory_pool_capacity < 1:
            raise ValueError("memory_pool_capacity deve ser positivo")
        if self.invalidation not in INVALIDATION_KINDS:
            raise ValueError(f"Invalidação desconhecida: {self.invalidation}")

    def to_dict(self) -> Dict:
        return asdict(self)


def contiguous_runs(positions: Iterable[int]) -> List[tuple]:
    runs = []
    for pos in sorted(positions):
        if runs and pos == runs[-1][1] + 1:
            runs[-1][1] = pos
        else:
            runs.append([pos, pos])
    return [tuple(r) for r in runs]


# ----------------------------------------------------------------------
# Estratégias de invalidação
# ----------------------------------------------------------------------
class InvalidationStrategy:
    """Marca entradas de partição já movidas para o índice"""

    name = ''

    def __init__(self, device: SimDevice):
        self.device = device
        self._dead: Dict[int, np.ndarray] = {}

    def attach(self, partition: Partition) -> None:
        self._dead[partition.pid] = np.zeros(len(partition), dtype=bool)

    def release(self, partition: Partition) -> None:
        self._dead.pop(partition.pid, None)

    def _charge(self, partition: Partition, pos: int, reader: LineReader) -> None:
        pass

    def is_valid(self, partition: Partition, pos: int, reader: Optional[LineReader] = None) -> bool:
        if reader is not None:
            self._charge(partition, pos, reader)
        return not self._dead[partition.pid][pos]

    def invalidate(self, partition: Partition, positions: List[int]) -> WriteReceipt:
        raise NotImplementedError


class FlagInvalidation(InvalidationStrategy):
    """Um byte por entrada (0 = válida)"""

    name = 'flag'

    def __init__(self, device: SimDevice):
        super().__init__(device)
        self._regions: Dict[int, Region] = {}

    def attach(self, partition: Partition) -> None:
        super().attach(partition)
        self._regions[partition.pid] = self.device.alloc(len(partition))

    def release(self, partition: Partition) -> None:
        super().release(partition)
        region = self._regions.pop(partition.pid, None)
        if region is not None:
            self.device.free(region)

    def _charge(self, partition: Partition, pos: int, reader: LineReader) -> None:
        reader.touch(self._regions[partition.pid].base + pos, 1)

    def invalidate(self, partition: Partition, positions: List[int]) -> WriteReceipt:
        receipt = EMPTY_RECEIPT
        base = self._regions[partition.pid].base
        for start, end in contiguous_runs(positions):
            self._dead[partition.pid][start:end + 1] = True
            receipt += self.device.write(base + start, b'\x01' * (end - start + 1))
        return receipt


class BitmapInvalidation(InvalidationStrategy):
    """Um bit por entrada; 512 entradas por linha de 64B"""

    name = 'bitmap'

    def __init__(self, device: SimDevice):
        super().__init__(device)
        self._regions: Dict[int, Region] = {}

    def attach(self, partition: Partition) -> None:
        super().attach(partition)
        self._regions[partition.pid] = self.device.alloc(-(-len(partition) // 8))

    def release(self, partition: Partition) -> None:
        super().release(partition)
        region = self._regions.pop(partition.pid, None)
        if region is not None:
            self.device.free(region)

    def _charge(self, partition: Partition, pos: int, reader: LineReader) -> None:
        reader.touch(self._regions[partition.pid].base + pos // 8, 1)

    def invalidate(self, partition: Partition, positions: List[int]) -> WriteReceipt:
        if not positions:
            return EMPTY_RECEIPT
        dead = self._dead[partition.pid]
        dead[positions] = True
        first_byte = min(positions) // 8
        last_byte = max(positions) // 8
        bits = dead[first_byte * 8:(last_byte + 1) * 8]
        if len(bits) % 8:
            bits = np.concatenate([bits, np.zeros(8 - len(bits) % 8, dtype=bool)])
        packed = np.packbits(bits, bitorder='little').tobytes()
        return self.device.write(self._regions[partition.pid].base + first_byte, packed)


class JournalInvalidation(InvalidationStrategy):
    """Faixas de posições inválidas em DRAM; nenhuma escrita na partição"""

    name = 'journal'

    def __init__(self, device: SimDevice):
        super().__init__(device)
        self._journals: Dict[int, IntervalSet] = {}

    def attach(self, partition: Partition) -> None:
        self._journals[partition.pid] = IntervalSet()

    def release(self, partition: Partition) -> None:
        self._journals.pop(partition.pid, None)

    def invalidate(self, partition: Partition, positions: List[int]) -> WriteReceipt:
        for start, end in contiguous_runs(positions):
            self._journals[partition.pid].add(start, end)
        return EMPTY_RECEIPT

    def is_valid(self, partition: Partition, pos: int, reader: Optional[LineReader] = None) -> bool:
        return not self._journals[partition.pid].covers(pos)


def make_strategy(name: str, device: SimDevice) -> InvalidationStrategy:
    strategies = {
        'flag': FlagInvalidation,
        'bitmap': BitmapInvalidation,
        'journal': JournalInvalidation,
    }
    if name not in strategies:
        raise ValueError(f"Invalidação desconhecida: {name} (use {', '.join(INVALIDATION_KINDS)})")
    return strategies[name](device)


class MemoryPool:
    """Chaves com remoção adiada (late materialization)"""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self._keys: Dict[int, None] = {}

    def __len__(self) -> int:
        return len(self._keys)

    def __contains__(self, key: int) -> bool:
        return key in self._keys

    @property
    def full(self) -> bool:
        return len(self._keys) >= self.capacity

    def add(self, key: int) -> None:
        self._keys[key] = None

    def discard(self, key: int) -> bool:
        if key in self._keys:
            del self._keys[key]
            return True
        return False

    def drain(self) -> List[int]:
        keys = list(self._keys)
        self._keys.clear()
        return keys


# ----------------------------------------------------------------------
# Base comum do AM e do eAM
# ----------------------------------------------------------------------
class _PartitionMerging:
    method = ''

    def __init__(self, device: SimDevice, config: Optional[MergingConfig] = None,
                 strategy: Optional[InvalidationStrategy] = None):
        self.device = device
        self.config = config or MergingConfig()
        self.strategy = strategy or make_strategy(self.config.invalidation, device)
        self.partitions = PartitionSet()
        self.counters: Dict[str, int] = defaultdict(int)
        self.invalidation_ns = 0

    def initialize(self, dataset: Iterable[Entry]) -> None:
        created = build_partitions(self.device, dataset, self.config.partition_capacity)
        for partition in created:
            self.strategy.attach(partition)
            self.partitions.add(partition)
        logger.info(f"{self.method.upper()} inicializado: {len(created)} partições "
                    f"(invalidação {self.strategy.name})")

    def _take(self, lo: int, hi: int, reader: LineReader) -> List[tuple]:
        """Copia e invalida as entradas válidas das partições na faixa"""
        fetched = []
        for partition in self.partitions.overlapping(lo, hi):
            positions = [
                pos for pos in partition.positions(lo, hi, reader)
                if self.strategy.is_valid(partition, pos, reader)
            ]
            if not positions:
                continue
            fetched.extend((partition.entry_at(pos), partition.pid) for pos in positions)
            self._invalidate(partition, positions)
        return fetched

    def _invalidate(self, partition: Partition, positions: List[int]) -> None:
        receipt = self.strategy.invalidate(partition, positions)
        self.invalidation_ns += receipt.cost_ns
        partition.live_count -= len(positions)
        partition.refresh_window(lambda pos: not self.strategy.is_valid(partition, pos))
        if partition.live_count <= 0:
            self.partitions.remove(partition.pid)
            self.strategy.release(partition)
            self.device.free(partition.region)
            self.counters['partitions_freed'] += 1

    def _partition_copies(self, key: int) -> None:
        reader = LineReader(self.device)
        for partition in self.partitions.overlapping(key, key):
            positions = [
                pos for pos in partition.positions(key, key, reader)
                if self.strategy.is_valid(partition, pos, reader)
            ]
            if positions:
                self._invalidate(partition, positions)

    def partition_entries(self) -> List[Entry]:
        live = []
        for partition in self.partitions:
            for pos in range(partition.first, partition.last + 1):
                if self.strategy.is_valid(partition, pos):
                    live.append(partition.entry_at(pos))
        return live

    def converged(self) -> bool:
        return len(self.partitions) == 0

    def point_search(self, key: int) -> List[Entry]:
        return self.search(key, key)

    def update(self, key: int, new_rid: int) -> None:
        self.delete(key)
        self.insert(Entry(key, new_rid))

    def stats(self) -> Dict:
        result = dict(self.counters)
        result['partitions'] = len(self.partitions)
        result['invalidation'] = self.strategy.name
        result['invalidation_ns'] = self.invalidation_ns
        return result


class AdaptiveMerging(_PartitionMerging):
    """AM clássico: partitioned B+tree com deslocamento e memory pool para remoções"""

    method = 'am'

    def __init__(self, device: SimDevice, config: Optional[MergingConfig] = None,
                 strategy: Optional[InvalidationStrategy] = None,
                 tree_config: Optional[TreeConfig] = None):
        super().__init__(device, config, strategy)
        self.index = PartitionedBTree(device, tree_config)
        self.pool = MemoryPool(self.config.memory_pool_capacity)

    def search(self, lo: int, hi: int) -> List[Entry]:
        check_range(lo, hi)
        result = [e.plain() for e in self.index.range_search(lo, hi)]
        reader = LineReader(self.device)
        fetched = self._take(lo, hi, reader)
        if fetched:
            self.index.bulk_insert(sorted(
                (PartitionEntry(entry.key, entry.rid, pid=pid) for entry, pid in fetched),
                key=lambda e: e.sort_key,
            ))
        result.extend(entry for entry, _ in fetched)
        self.counters['merged_entries'] += len(fetched)
        self.counters['searches'] += 1
        # O memory pool é varrido a cada consulta
        result = [e for e in result if e.key not in self.pool]
        result.sort(key=lambda e: e.sort_key)
        return result

    def insert(self, entry: Entry) -> None:
        if entry.key in self.pool:
            self.pool.discard(entry.key)
            self._apply_delete(entry.key)
        self.index.insert(entry.key, entry.rid)

    def delete(self, key: int) -> None:
        self.pool.add(key)
        if self.pool.full:
            self.drain()

    def delete_range(self, lo: int, hi: int) -> None:
        check_range(lo, hi)
        keys = {e.key for e in self.index.range_search(lo, hi)}
        reader = LineReader(self.device)
        for partition in self.partitions.overlapping(lo, hi):
            for pos in partition.positions(lo, hi, reader):
                if self.strategy.is_valid(partition, pos):
                    keys.add(int(partition.keys[pos]))
        for key in sorted(keys):
            self.delete(key)

    def _apply_delete(self, key: int) -> None:
        self.index.delete(key)
        self._partition_copies(key)

    def drain(self) -> None:
        keys = self.pool.drain()
        for key in keys:
            self._apply_delete(key)
        self.counters['pool_drains'] += 1
        logger.debug(f"Memory pool descarregado: {len(keys)} remoções")

    def live_entries(self) -> List[Entry]:
        entries = [e.plain() for e in self.index.scan_all()] + self.partition_entries()
        entries = [e for e in entries if e.key not in self.pool]
        entries.sort(key=lambda e: e.sort_key)
        return entries

    def stats(self) -> Dict:
        result = super().stats()
        result['pooled'] = len(self.pool)
        result['index'] = self.index.stats()
        return result


class ExtendedAdaptiveMerging(_PartitionMerging):
    """eAM: UB+tree como índice e um bitmap por partição"""

    method = 'eam'

    def __init__(self, device: SimDevice, config: Optional[MergingConfig] = None,
                 tree_config: Optional[TreeConfig] = None):
        super().__init__(device, config, BitmapInvalidation(device))
        self.index = UBTree(device, tree_config)

    def search(self, lo: int, hi: int) -> List[Entry]:
        check_range(lo, hi)
        result = list(self.index.range_search(lo, hi))
        reader = LineReader(self.device)
        fetched = [entry for entry, _ in self._take(lo, hi, reader)]
        if fetched:
            fetched.sort(key=lambda e: e.sort_key)
            self.index.bulk_insert(fetched)
            result.extend(fetched)
            result.sort(key=lambda e: e.sort_key)
        self.counters['merged_entries'] += len(fetched)
        self.counters['searches'] += 1
        return result

    def insert(self, entry: Entry) -> None:
        self.index.insert(entry)

    def delete(self, key: int) -> None:
        if self.index.point_search(key) is not None:
            self.index.delete(key)
        self._partition_copies(key)

    def delete_range(self, lo: int, hi: int) -> None:
        check_range(lo, hi)
        keys = {e.key for e in self.index.range_search(lo, hi)}
        reader = LineReader(self.device)
        for partition in self.partitions.overlapping(lo, hi):
            for pos in partition.positions(lo, hi, reader):
                if self.strategy.is_valid(partition, pos):
                    keys.add(int(partition.keys[pos]))
        for key in sorted(keys):
            self.delete(key)

    def live_entries(self) -> List[Entry]:
        entries = list(self.index.scan_all()) + self.partition_entries()
        entries.sort(key=lambda e: e.sort_key)
        return entries

    def stats(self) -> Dict:
        result = super().stats()
        result['index'] = self.index.stats()
        return result

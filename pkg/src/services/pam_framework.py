import struct
from collections import defaultdict
from dataclasses import dataclass, asdict
from typing import Callable, Dict, Iterable, Iterator, List, Optional, Set
import logging

import numpy as np
import pandas as pd

from src.models.entry import ENTRY_SIZE, Entry, encode_entries
from src.services.baseline_indexes import build_index
from src.services.bbtree import BBTree, TreeConfig
from src.services.intervals import IntervalSet
from src.services.pcm_device import LineReader, Region, SimDevice

# Configure logging
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)


class InvalidRangeError(ValueError):
    pass


def check_range(lo: int, hi: int) -> None:
    if lo > hi:
        raise InvalidRangeError(f"Faixa invertida: [{lo}, {hi}]")


@dataclass
class FrameworkConfig:
    """Parâmetros do PAM"""
    partition_capacity: int = 65536  # entradas do sorting buffer (1 MiB)
    journal_coalesce: bool = True
    entry_log_capacity: int = 8192
    deletion_page_bytes: int = 4096

    def __post_init__(self):
        if self.partition_capacity < 1:
            raise ValueError("partition_capacity deve ser positivo")
        if self.entry_log_capacity < 1:
            raise ValueError("entry_log_capacity deve ser positivo")
        if self.deletion_page_bytes < 64 or self.deletion_page_bytes % 64:
            raise ValueError("deletion_page_bytes deve ser múltiplo de 64")

    def to_dict(self) -> Dict:
        return asdict(self)


# ----------------------------------------------------------------------
# Partições
# ----------------------------------------------------------------------
class Partition:
    """Run ordenado de entradas no PCM; descritor (min, max, first, last) em DRAM"""

    def __init__(self, pid: int, region: Region, keys: np.ndarray, rids: np.ndarray):
        self.pid = pid
        self.region = region
        self.keys = keys
        self.rids = rids
        self.first = 0
        self.last = len(keys) - 1
        self.live_count = len(keys)

    def __len__(self) -> int:
        return len(self.keys)

    @property
    def min(self) -> int:
        return int(self.keys[self.first])

    @property
    def max(self) -> int:
        return int(self.keys[self.last])

    @property
    def first_addr(self) -> int:
        return self.addr(self.first)

    @property
    def last_addr(self) -> int:
        return self.addr(self.last)

    def addr(self, pos: int) -> int:
        return self.region.base + pos * ENTRY_SIZE

    def overlaps(self, lo: int, hi: int) -> bool:
        return self.live_count > 0 and self.min <= hi and self.max >= lo

    def lower_bound(self, key: int, reader: LineReader) -> int:
        """Busca binária na janela viva; cobra apenas as linhas sondadas"""
        lo, hi = self.first, self.last + 1
        while lo < hi:
            mid = (lo + hi) // 2
            reader.touch(self.addr(mid), ENTRY_SIZE)
            if int(self.keys[mid]) < key:
                lo = mid + 1
            else:
                hi = mid
        return lo

    def positions(self, lo: int, hi: int, reader: LineReader) -> Iterator[int]:
        pos = self.lower_bound(lo, reader)
        while pos <= self.last:
            reader.touch(self.addr(pos), ENTRY_SIZE)
            if int(self.keys[pos]) > hi:
                break
            yield pos
            pos += 1

    def entry_at(self, pos: int) -> Entry:
        return Entry(int(self.keys[pos]), int(self.rids[pos]))

    def refresh_window(self, is_dead_at: Callable[[int], bool]) -> None:
        """Avança first/last sobre posições mortas (min e max passam a ser os vivos)"""
        while self.first <= self.last and is_dead_at(self.first):
            self.first += 1
        while self.last >= self.first and is_dead_at(self.last):
            self.last -= 1

    def describe(self) -> Dict:
        return {
            'pid': self.pid,
            'min': self.min if self.live_count else None,
            'max': self.max if self.live_count else None,
            'first_addr': self.first_addr if self.live_count else None,
            'last_addr': self.last_addr if self.live_count else None,
            'live_count': self.live_count,
        }


class PartitionSet:
    """Descritores em DRAM das partições não vazias"""

    def __init__(self):
        self._parts: Dict[int, Partition] = {}

    def __len__(self) -> int:
        return len(self._parts)

    def __iter__(self) -> Iterator[Partition]:
        return iter(self._parts.values())

    def __contains__(self, pid: int) -> bool:
        return pid in self._parts

    def add(self, partition: Partition) -> None:
        self._parts[partition.pid] = partition

    def remove(self, pid: int) -> Partition:
        return self._parts.pop(pid)

    def get(self, pid: int) -> Optional[Partition]:
        return self._parts.get(pid)

    def overlapping(self, lo: int, hi: int) -> List[Partition]:
        # Seleção por min/max
        return [p for p in self._parts.values() if p.overlaps(lo, hi)]

    def clear(self) -> None:
        self._parts.clear()


class PartitionDirectory:
    """Diretório persistente das partições: (pid, base, entradas, liberada)"""

    RECORD = struct.Struct('<QQQQ')

    def __init__(self, device: SimDevice):
        self.device = device
        self.region: Optional[Region] = None
        self._slots: Dict[int, int] = {}

    def write(self, partitions: List[Partition]) -> None:
        if not partitions:
            return
        self.region = self.device.alloc(len(partitions) * self.RECORD.size)
        data = b''.join(self.RECORD.pack(p.pid, p.region.base, len(p), 0) for p in partitions)
        self.device.write(self.region.base, data)
        self._slots = {p.pid: i for i, p in enumerate(partitions)}

    def mark_freed(self, pid: int) -> None:
        slot = self._slots[pid]
        addr = self.region.base + slot * self.RECORD.size + 24
        self.device.write(addr, struct.pack('<Q', 1))

    def read(self, reader: LineReader) -> List[tuple]:
        if self.region is None:
            return []
        raw = reader.read(self.region.base, self.region.length)
        records = []
        for i in range(self.region.length // self.RECORD.size):
            pid, base, count, freed = self.RECORD.unpack_from(raw, i * self.RECORD.size)
            if count == 0:
                break
            records.append((pid, base, count, bool(freed)))
        self._slots = {pid: i for i, (pid, _, _, _) in enumerate(records)}
        return records


# ----------------------------------------------------------------------
# Journals, sorting buffer e entry log
# ----------------------------------------------------------------------
class InsertionJournal(IntervalSet):
    """Faixas de chaves já copiadas das partições para o merge index"""

    @classmethod
    def rebuild(cls, keys: Iterable[int], coalesce_adjacent: bool = True) -> 'InsertionJournal':
        return cls.from_sorted_keys(sorted(set(keys)), coalesce_adjacent)

    def to_csv(self) -> str:
        frame = pd.DataFrame(self.ranges(), columns=['lo', 'hi'])
        return frame.to_csv(index=False)


class DeletionJournal:
    """Chaves removidas de partições ou de dados já mesclados; páginas encadeadas no PCM"""

    RECORD = struct.Struct('<QQ')  # chave, quantidade de cópias removidas

    def __init__(self, device: SimDevice, page_bytes: int = 4096):
        self.device = device
        self.page_bytes = page_bytes
        self.per_page = page_bytes // self.RECORD.size - 1  # último slot: link
        self.header = device.alloc(64)
        self.pages: List[Region] = []
        self._keys: Set[int] = set()
        self._order: List[int] = []
        self.write_cost_ns = 0

    def __contains__(self, key: int) -> bool:
        return key in self._keys

    def __len__(self) -> int:
        return len(self._keys)

    def keys(self) -> List[int]:
        return list(self._order)

    def append(self, key: int, copies: int = 1) -> None:
        if key in self._keys:
            return
        index = len(self._order)
        page_no, slot = divmod(index, self.per_page)
        if page_no == len(self.pages):
            page = self.device.alloc(self.page_bytes)
            link = page.base + 1
            if self.pages:
                tail = self.pages[-1]
                self.write_cost_ns += self.device.write(
                    tail.base + self.per_page * self.RECORD.size, struct.pack('<Q', link)
                ).cost_ns
            else:
                self.write_cost_ns += self.device.write(self.header.base, struct.pack('<Q', link)).cost_ns
            self.pages.append(page)
        page = self.pages[page_no]
        # copies >= 1 distingue registros válidos de slots zerados
        receipt = self.device.write(page.base + slot * self.RECORD.size, self.RECORD.pack(key, max(copies, 1)))
        self.write_cost_ns += receipt.cost_ns
        self._keys.add(key)
        self._order.append(key)

    def crash(self) -> None:
        self._keys.clear()
        self._order.clear()
        self.pages = []

    def recover(self) -> None:
        reader = LineReader(self.device)
        (link,) = struct.unpack('<Q', reader.read(self.header.base, 8))
        while link:
            page = Region(link - 1, self.page_bytes)
            self.pages.append(page)
            raw = reader.read(page.base, self.page_bytes)
            for slot in range(self.per_page):
                key, copies = self.RECORD.unpack_from(raw, slot * self.RECORD.size)
                if copies == 0:
                    break
                self._keys.add(key)
                self._order.append(key)
            (link,) = struct.unpack_from('<Q', raw, self.per_page * self.RECORD.size)

    def to_csv(self) -> str:
        return pd.DataFrame({'key': self._order}).to_csv(index=False)


class SortingBuffer:
    """Área de DRAM onde as entradas são ordenadas antes de virar partição"""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self._entries: List[Entry] = []

    def __len__(self) -> int:
        return len(self._entries)

    @property
    def full(self) -> bool:
        return len(self._entries) >= self.capacity

    def add(self, entry: Entry) -> None:
        self._entries.append(entry)

    def drain_sorted(self) -> List[Entry]:
        batch = sorted(self._entries, key=lambda e: e.sort_key)
        self._entries = []
        return batch


class EntryLog:
    """Log no PCM das operações ainda no buffer; truncado a cada flush"""

    HEADER = struct.Struct('<Q')
    RECORD = struct.Struct('<QQQQ')  # chave, rid, época, operação
    OP_INSERT = 1
    OP_DELETE = 2

    def __init__(self, device: SimDevice, capacity: int = 8192):
        self.device = device
        self.capacity = capacity
        self.header = device.alloc(64)
        self.region = device.alloc(capacity * self.RECORD.size)
        self.epoch = 1
        self.position = 0
        self.device.write(self.header.base, self.HEADER.pack(self.epoch))

    @property
    def full(self) -> bool:
        return self.position >= self.capacity

    def __len__(self) -> int:
        return self.position

    def append(self, entry: Entry) -> None:
        if self.full:
            raise OverflowError("Entry log cheio")
        op = self.OP_DELETE if entry.tombstone else self.OP_INSERT
        addr = self.region.base + self.position * self.RECORD.size
        self.device.write(addr, self.RECORD.pack(entry.key, entry.rid, self.epoch, op))
        self.position += 1

    def truncate(self) -> None:
        if self.position == 0:
            return
        self.epoch += 1
        self.position = 0
        self.device.write(self.header.base, self.HEADER.pack(self.epoch))

    def crash(self) -> None:
        self.position = 0

    def recover(self) -> List[Entry]:
        reader = LineReader(self.device)
        (self.epoch,) = self.HEADER.unpack(reader.read(self.header.base, self.HEADER.size))
        entries = []
        for pos in range(self.capacity):
            raw = reader.read(self.region.base + pos * self.RECORD.size, self.RECORD.size)
            key, rid, epoch, op = self.RECORD.unpack(raw)
            if epoch != self.epoch:
                break
            entries.append(Entry(key, rid, tombstone=(op == self.OP_DELETE)))
        self.position = len(entries)
        return entries


def write_partition(device: SimDevice, pid: int, entries: List[Entry]) -> Partition:
    region = device.alloc(len(entries) * ENTRY_SIZE)
    device.write(region.base, encode_entries(entries))
    keys = np.fromiter((e.key for e in entries), dtype=np.uint64, count=len(entries))
    rids = np.fromiter((e.rid for e in entries), dtype=np.uint64, count=len(entries))
    return Partition(pid, region, keys, rids)


def build_partitions(device: SimDevice, dataset: Iterable[Entry], capacity: int) -> List[Partition]:
    """Copia o dataset para partições ordenadas passando pelo sorting buffer"""
    buffer = SortingBuffer(capacity)
    created: List[Partition] = []
    for entry in dataset:
        buffer.add(entry)
        if buffer.full:
            created.append(write_partition(device, len(created), buffer.drain_sorted()))
    if len(buffer):
        created.append(write_partition(device, len(created), buffer.drain_sorted()))
    return created


# ----------------------------------------------------------------------
# Framework PAM
# ----------------------------------------------------------------------
class PAMFramework:
    """Adaptive merging para PCM: partições + journals + merge index"""

    method = 'pam'

    def __init__(self, device: SimDevice, index_kind: str = 'bb',
                 config: Optional[FrameworkConfig] = None,
                 tree_config: Optional[TreeConfig] = None):
        self.device = device
        self.config = config or FrameworkConfig()
        self.index_kind = index_kind
        self.index = build_index(index_kind, device, tree_config)
        self.partitions = PartitionSet()
        self.directory = PartitionDirectory(device)
        self.ijournal = InsertionJournal(self.config.journal_coalesce)
        self.djournal = DeletionJournal(device, self.config.deletion_page_bytes)
        self.log: Optional[EntryLog] = None
        if isinstance(self.index, BBTree):
            self.log = EntryLog(device, self.config.entry_log_capacity)
            self.index.attach_log(self.log)
        self.counters: Dict[str, int] = defaultdict(int)

    # -- inicialização --------------------------------------------------
    def initialize(self, dataset: Iterable[Entry]) -> None:
        created = build_partitions(self.device, dataset, self.config.partition_capacity)
        self.directory.write(created)
        for partition in created:
            self.partitions.add(partition)
        logger.info(f"PAM inicializado: {len(created)} partições, "
                    f"{sum(len(p) for p in created)} entradas")

    def _is_dead(self, key: int) -> bool:
        return self.ijournal.covers(key) or key in self.djournal

    def _release(self, touched: Iterable[Partition]) -> None:
        for partition in touched:
            if partition.pid not in self.partitions:
                continue
            partition.refresh_window(lambda pos: self._is_dead(int(partition.keys[pos])))
            if partition.live_count <= 0:
                self.partitions.remove(partition.pid)
                self.directory.mark_freed(partition.pid)
                self.device.free(partition.region)
                self.counters['partitions_freed'] += 1
                logger.debug(f"Partição {partition.pid} liberada")

    # -- Algoritmo 1 -----------------------------------------------------
    def search(self, lo: int, hi: int) -> List[Entry]:
        check_range(lo, hi)
        result = list(self.index.range_search(lo, hi))
        reader = LineReader(self.device)
        to_insert: List[Entry] = []
        touched: Dict[int, Partition] = {}
        for a, b in self.ijournal.uncovered(lo, hi):
            for partition in self.partitions.overlapping(a, b):
                found = 0
                for pos in partition.positions(a, b, reader):
                    entry = partition.entry_at(pos)
                    if entry.key in self.djournal:
                        continue
                    to_insert.append(entry)
                    found += 1
                if found:
                    partition.live_count -= found
                    touched[partition.pid] = partition
        if to_insert:
            to_insert.sort(key=lambda e: e.sort_key)
            self.index.bulk_insert(to_insert)
            self.counters['merged_entries'] += len(to_insert)
            result.extend(to_insert)
            result.sort(key=lambda e: e.sort_key)
        self.ijournal.add(lo, hi)
        self._release(touched.values())
        self.counters['searches'] += 1
        return result

    def point_search(self, key: int) -> List[Entry]:
        return self.search(key, key)

    # -- modificações ---------------------------------------------------
    def insert(self, entry: Entry) -> None:
        self.index.insert(entry)

    def delete(self, key: int) -> None:
        resident = self.index.point_search(key) is not None
        covered = self.ijournal.covers(key)
        logged = key in self.djournal
        if resident:
            self.index.delete(key)

        copies = 0
        touched = []
        if not covered and not logged:
            reader = LineReader(self.device)
            for partition in self.partitions.overlapping(key, key):
                found = sum(1 for _ in partition.positions(key, key, reader))
                if found:
                    partition.live_count -= found
                    copies += found
                    touched.append(partition)

        if not logged and (copies or (resident and covered)):
            self.djournal.append(key, copies)
        self._release(touched)
        if resident or copies:
            self.counters['deletes'] += 1

    def delete_range(self, lo: int, hi: int) -> None:
        check_range(lo, hi)
        keys = {e.key for e in self.index.range_search(lo, hi)}
        reader = LineReader(self.device)
        for a, b in self.ijournal.uncovered(lo, hi):
            for partition in self.partitions.overlapping(a, b):
                for pos in partition.positions(a, b, reader):
                    key = int(partition.keys[pos])
                    if key not in self.djournal:
                        keys.add(key)
        for key in sorted(keys):
            self.delete(key)

    def update(self, key: int, new_rid: int) -> None:
        self.delete(key)
        self.insert(Entry(key, new_rid))

    # -- estado ---------------------------------------------------------
    def converged(self) -> bool:
        return len(self.partitions) == 0

    def partition_entries(self) -> List[Entry]:
        live = []
        for partition in self.partitions:
            for pos in range(partition.first, partition.last + 1):
                key = int(partition.keys[pos])
                if not self._is_dead(key):
                    live.append(partition.entry_at(pos))
        return live

    def live_entries(self) -> List[Entry]:
        entries = list(self.index.scan_all()) + self.partition_entries()
        entries.sort(key=lambda e: e.sort_key)
        return entries

    # -- crash / recovery ---------------------------------------------
    def crash(self) -> None:
        """Simula a queda: tudo em DRAM é perdido"""
        self.index.crash()
        self.partitions.clear()
        self.ijournal.clear()
        self.djournal.crash()
        if self.log is not None:
            self.log.crash()

    def recover(self) -> None:
        self.djournal.recover()
        self.index.recover()
        if self.log is not None:
            replayed = self.log.recover()
            for entry in replayed:
                self.index.replay(entry)
            logger.info(f"Entry log reaplicado: {len(replayed)} operações")

        reader = LineReader(self.device)
        restored = []
        for pid, base, count, freed in self.directory.read(reader):
            if freed:
                continue
            raw = reader.read(base, count * ENTRY_SIZE)
            pairs = np.frombuffer(raw, dtype='<u8').reshape(count, 2)
            restored.append(Partition(pid, Region(base, count * ENTRY_SIZE),
                                      pairs[:, 0].copy(), pairs[:, 1].copy()))

        indexed = {(e.key, e.rid) for e in self.index.scan_all()}
        # Chave com cópia de partição ainda não mesclada fica fora do journal
        unmerged = {
            int(key)
            for partition in restored
            for key, rid in zip(partition.keys, partition.rids)
            if int(key) not in self.djournal and (int(key), int(rid)) not in indexed
        }
        keys = [key for key, _ in indexed if key not in unmerged]
        self.ijournal = InsertionJournal.rebuild(keys, self.config.journal_coalesce)

        for partition in restored:
            partition.live_count = sum(1 for k in partition.keys if not self._is_dead(int(k)))
            self.partitions.add(partition)
            self._release([partition])
        logger.info(f"Recuperação concluída: {len(self.ijournal)} faixas no journal, "
                    f"{len(self.partitions)} partições")

    def stats(self) -> Dict:
        result = dict(self.counters)
        result['partitions'] = len(self.partitions)
        result['journal_ranges'] = len(self.ijournal)
        result['deleted_keys'] = len(self.djournal)
        result['invalidation_ns'] = self.djournal.write_cost_ns
        result['index'] = self.index.stats()
        return result

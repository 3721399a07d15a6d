import bisect
import struct
from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional
import logging

from src.models.entry import Entry, tombstone
from src.services.bbtree import BBTree, LeafNode, MainIndex, TreeConfig
from src.services.pcm_device import LineReader, SimDevice

# Configure logging
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

NO_PARTITION = (1 << 64) - 1
INDEX_KINDS = ('bb', 'sb', 'ub')


class UnbufferedIndex:
    """Índice sem buffer: cada operação é aplicada imediatamente nas folhas"""

    kind = 'sb'

    def __init__(self, device: SimDevice, config: Optional[TreeConfig] = None):
        self.device = device
        self.config = config or TreeConfig()
        self.main = MainIndex(device, self.config, sorted_slots=self._sorted_slots(), name=self.kind)

    def _sorted_slots(self) -> int:
        return self.config.sorted_slots

    def insert(self, entry: Entry) -> None:
        self.main.bulkload(self.main.root, [entry])

    def delete(self, key: int) -> None:
        self.main.bulkload(self.main.root, [tombstone(key)])

    def bulk_insert(self, entries: List[Entry]) -> None:
        self.main.bulkload(self.main.root, entries)

    def point_search(self, key: int) -> Optional[Entry]:
        return self.main.point_search(key)

    def range_search(self, lo: int, hi: int) -> List[Entry]:
        return self.main.range_search(lo, hi)

    def scan_all(self) -> Iterator[Entry]:
        return self.main.scan_all()

    def crash(self) -> None:
        self.main.crash()

    def recover(self) -> None:
        self.main.recover()

    def verify(self) -> List[str]:
        return self.main.verify()

    def dump(self) -> str:
        return self.main.dump()

    def stats(self) -> Dict:
        return self.main.stats()


class SBTree(UnbufferedIndex):
    """SB+tree: folhas de duas seções, sem buffer em DRAM"""
    kind = 'sb'


class UBTree(UnbufferedIndex):
    """UB+tree: folhas só com área não ordenada + bitmap (busca linear)"""
    kind = 'ub'

    def _sorted_slots(self) -> int:
        return 0


def build_index(kind: str, device: SimDevice, config: Optional[TreeConfig] = None):
    """Cria o merge index pelo nome usado no harness"""
    if kind == 'bb':
        return BBTree(device, config)
    if kind == 'sb':
        return SBTree(device, config)
    if kind == 'ub':
        return UBTree(device, config)
    raise ValueError(f"Tipo de índice desconhecido: {kind} (use {', '.join(INDEX_KINDS)})")


# ----------------------------------------------------------------------
# Partitioned B+tree do AM: folhas ordenadas com deslocamento
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class PartitionEntry(Entry):
    pid: int = NO_PARTITION

    def plain(self) -> Entry:
        return Entry(self.key, self.rid)


class PartitionEntryCodec:
    """Slot de 32 bytes: chave, rid, id da partição, padding"""
    slot_size = 32
    _struct = struct.Struct('<QQQQ')

    def encode(self, entry: PartitionEntry) -> bytes:
        return self._struct.pack(entry.key, entry.rid, entry.pid, 0)

    def decode(self, data: bytes, offset: int = 0) -> PartitionEntry:
        key, rid, pid, _ = self._struct.unpack_from(data, offset)
        return PartitionEntry(key, rid, pid=pid)


class SortedLeaf(LeafNode):
    """Folha clássica: entradas contíguas e ordenadas, deslocadas a cada modificação"""

    def _contiguous(self) -> None:
        self.valid = (1 << self.count) - 1
        self.sorted_hwm = self.count
        self._meta_dirty = True

    def try_insert(self, entry: Entry) -> bool:
        if self.count >= self.capacity:
            return False
        keys = [self.slots[i].sort_key for i in range(self.count)]
        pos = bisect.bisect_right(keys, entry.sort_key)
        for j in range(self.count, pos, -1):
            self.slots[j] = self.slots[j - 1]
            self._dirty_slots.add(j)
        self.slots[pos] = entry
        self._dirty_slots.add(pos)
        self.count += 1
        self._contiguous()
        return True

    def remove_key(self, key: int, reader: LineReader) -> int:
        occupied = list(range(self.count))
        start = self._sorted_lower_bound((key, 0), reader, occupied)
        end = start
        while end < self.count:
            reader.touch(self.slot_addr(end), self.codec.slot_size)
            if self.slots[end].key != key:
                break
            end += 1
        removed = end - start
        if removed == 0:
            return 0
        for j in range(start, self.count - removed):
            self.slots[j] = self.slots[j + removed]
            self._dirty_slots.add(j)
        self.count -= removed
        self._contiguous()
        return removed


class PartitionedMainIndex(MainIndex):
    leaf_class = SortedLeaf


PBT_CONFIG = TreeConfig(leaf_fanout=16, inner_fanout=32, sorted_slots=16, fill_slots=12)


class PartitionedBTree:
    """B+tree do AM cujas entradas carregam o id da partição de origem"""

    def __init__(self, device: SimDevice, config: Optional[TreeConfig] = None):
        self.device = device
        self.config = config or PBT_CONFIG
        self.main = PartitionedMainIndex(
            device, self.config, sorted_slots=self.config.leaf_fanout,
            codec=PartitionEntryCodec(), name='pbt',
        )

    def insert(self, key: int, rid: int, pid: int = NO_PARTITION) -> None:
        self.main.bulkload(self.main.root, [PartitionEntry(key, rid, pid=pid)])

    def bulk_insert(self, entries: List[PartitionEntry]) -> None:
        """Um único passe ordenado; cada folha ainda desloca suas entradas"""
        self.main.bulkload(self.main.root, entries)

    def delete(self, key: int) -> None:
        self.main.bulkload(self.main.root, [tombstone(key)])

    def range_search(self, lo: int, hi: int) -> List[PartitionEntry]:
        return self.main.range_search(lo, hi)

    def scan_all(self) -> Iterator[PartitionEntry]:
        return self.main.scan_all()

    def verify(self) -> List[str]:
        return self.main.verify()

    def stats(self) -> Dict:
        return self.main.stats()

import struct
from dataclasses import dataclass
from typing import Dict, Iterable, Iterator, List, Optional, Protocol, Tuple

# Codificação fixa de uma entrada no PCM: chave u64 + rid u64, little-endian
ENTRY_SIZE = 16
ENTRY_STRUCT = struct.Struct('<QQ')

KEY_MAX = (1 << 64) - 1
RID_MAX = (1 << 64) - 1

SortKey = Tuple[int, int]


@dataclass(frozen=True)
class Entry:
    """Entrada do merge index: chave + identificador do registro"""
    key: int
    rid: int
    tombstone: bool = False  # marca "ToDelete", nunca gravada nas folhas

    @property
    def sort_key(self) -> SortKey:
        return (self.key, self.rid)


def tombstone(key: int) -> Entry:
    return Entry(key, 0, tombstone=True)


def encode_entries(entries: Iterable[Entry]) -> bytes:
    return b''.join(ENTRY_STRUCT.pack(e.key, e.rid) for e in entries)


def range_bounds(lo: int, hi: int) -> Tuple[SortKey, SortKey]:
    """Limites (key, rid) inclusivos para uma faixa de chaves"""
    return (lo, 0), (hi, RID_MAX)


class MergeIndex(Protocol):
    """Contrato comum dos merge indexes (BB+tree, SB+tree, UB+tree)"""

    def insert(self, entry: Entry) -> None: ...

    def delete(self, key: int) -> None: ...

    def bulk_insert(self, entries: List[Entry]) -> None: ...

    def point_search(self, key: int) -> Optional[Entry]: ...

    def range_search(self, lo: int, hi: int) -> List[Entry]: ...

    def scan_all(self) -> Iterator[Entry]: ...

    def crash(self) -> None: ...

    def recover(self) -> None: ...

    def stats(self) -> Dict: ...


class MergingMethod(Protocol):
    """Contrato dos métodos de adaptive merging (AM, eAM, PAM)"""

    def initialize(self, dataset: Iterable[Entry]) -> None: ...

    def search(self, lo: int, hi: int) -> List[Entry]: ...

    def insert(self, entry: Entry) -> None: ...

    def delete(self, key: int) -> None: ...

    def delete_range(self, lo: int, hi: int) -> None: ...

    def update(self, key: int, new_rid: int) -> None: ...

    def converged(self) -> bool: ...

    def live_entries(self) -> List[Entry]: ...

    def stats(self) -> Dict: ...

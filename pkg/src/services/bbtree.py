import bisect
import struct
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Set, Tuple, Union
import logging

from sortedcontainers import SortedDict

from src.models.entry import (
    ENTRY_SIZE, KEY_MAX, RID_MAX, Entry, SortKey, range_bounds, tombstone,
)
from src.services.pcm_device import EMPTY_RECEIPT, LineReader, Region, SimDevice, WriteReceipt

# Configure logging
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

INF_KEY: SortKey = (KEY_MAX + 1, 0)
META_SIZE = 64
# bitmap u64, sorted_hwm u16, unsorted_used u16, próximo payload+1 u64, próximo meta+1 u64
META_STRUCT = struct.Struct('<QHHQQ')
ANCHOR_STRUCT = struct.Struct('<QQ')


@dataclass
class TreeConfig:
    """Parâmetros do índice (folhas de 512B com 32 slots de 16B por padrão)"""
    leaf_fanout: int = 32
    inner_fanout: int = 32
    sorted_slots: int = 24
    fill_slots: int = 24
    buffer_threshold: int = 4096
    align_sections: bool = True

    def __post_init__(self):
        if not 2 <= self.leaf_fanout <= 64:
            raise ValueError(f"leaf_fanout fora de [2, 64]: {self.leaf_fanout}")
        if self.inner_fanout < 3:
            raise ValueError(f"inner_fanout deve ser >= 3: {self.inner_fanout}")
        if not 0 <= self.sorted_slots <= self.leaf_fanout:
            raise ValueError(f"sorted_slots fora de [0, {self.leaf_fanout}]: {self.sorted_slots}")
        if not self.min_fill <= self.fill_slots <= self.leaf_fanout:
            raise ValueError(
                f"fill_slots deve estar entre {self.min_fill} e {self.leaf_fanout}: {self.fill_slots}"
            )
        if self.buffer_threshold < 1:
            raise ValueError("buffer_threshold deve ser positivo")

    @property
    def min_fill(self) -> int:
        return self.leaf_fanout // 2


def batch_order(entry: Entry) -> Tuple[int, int]:
    # Tombstone antes das inserções da mesma chave
    return (entry.key, -1) if entry.tombstone else (entry.key, entry.rid)


class EntryCodec:
    """Codificação de slot: 16 bytes (chave, rid)"""
    slot_size = ENTRY_SIZE
    _struct = struct.Struct('<QQ')

    def encode(self, entry: Entry) -> bytes:
        return self._struct.pack(entry.key, entry.rid)

    def decode(self, data: bytes, offset: int = 0) -> Entry:
        key, rid = self._struct.unpack_from(data, offset)
        return Entry(key, rid)


# ----------------------------------------------------------------------
# Folhas
# ----------------------------------------------------------------------
class LeafNode:
    """Folha de duas seções: área de entradas no PCM + linha de metadados (bitmap)"""

    def __init__(self, index: 'MainIndex', payload: Region, meta: Region, leaf_id: int):
        self.index = index
        self.device = index.device
        self.codec = index.codec
        self.payload = payload
        self.meta = meta
        self.id = leaf_id
        self.capacity = index.config.leaf_fanout
        self.sorted_slots = index.sorted_slots
        self.slots: List[Optional[Entry]] = [None] * self.capacity
        self.valid = 0
        self.count = 0
        self.sorted_hwm = 0
        self.unsorted_hwm = self.sorted_slots
        self.next: Optional['LeafNode'] = None
        self.parent: Optional['InnerNode'] = None
        self.merged_into: Optional['LeafNode'] = None
        self._dirty_slots: Set[int] = set()
        self._meta_dirty = False

    # -- estado ---------------------------------------------------------
    def is_valid(self, slot: int) -> bool:
        return bool(self.valid >> slot & 1)

    def _set(self, slot: int, entry: Entry) -> None:
        self.slots[slot] = entry
        if not self.is_valid(slot):
            self.valid |= 1 << slot
            self.count += 1
        self._dirty_slots.add(slot)
        self._meta_dirty = True

    def _clear(self, slot: int) -> None:
        if self.is_valid(slot):
            self.valid &= ~(1 << slot)
            self.count -= 1
            self._meta_dirty = True

    def slot_addr(self, slot: int) -> int:
        return self.payload.base + slot * self.codec.slot_size

    def valid_sorted_slots(self) -> List[int]:
        return [i for i in range(self.sorted_hwm) if self.valid >> i & 1]

    def valid_unsorted_slots(self) -> List[int]:
        return [i for i in range(self.sorted_slots, self.unsorted_hwm) if self.valid >> i & 1]

    def valid_entries(self, reader: Optional[LineReader] = None) -> List[Entry]:
        result = []
        for i in range(self.capacity):
            if self.valid >> i & 1:
                if reader is not None:
                    reader.touch(self.slot_addr(i), self.codec.slot_size)
                result.append(self.slots[i])
        result.sort(key=lambda e: e.sort_key)
        return result

    def max_sort_key(self) -> Optional[SortKey]:
        keys = [self.slots[i].sort_key for i in range(self.capacity) if self.valid >> i & 1]
        return max(keys) if keys else None

    # -- inserção (ordem do Algoritmo 3) ---------------------------------
    def _unsorted_gap(self) -> Optional[int]:
        for i in range(self.sorted_slots, self.unsorted_hwm):
            if not self.valid >> i & 1:
                return i
        return None

    def _sorted_gap(self, entry: Entry) -> Optional[int]:
        """Lacuna no sorted section que preserva a ordem"""
        if self.sorted_slots == 0:
            return None
        occupied = self.valid_sorted_slots()
        keys = [self.slots[i].sort_key for i in occupied]
        rank = bisect.bisect_left(keys, entry.sort_key)
        prev_slot = occupied[rank - 1] if rank > 0 else -1
        next_slot = occupied[rank] if rank < len(occupied) else self.sorted_slots
        if next_slot - prev_slot > 1:
            return prev_slot + 1
        return None

    def try_insert(self, entry: Entry) -> bool:
        slot = self._unsorted_gap()
        if slot is None and self.unsorted_hwm < self.capacity:
            slot = self.unsorted_hwm
            self.unsorted_hwm += 1
        if slot is None:
            slot = self._sorted_gap(entry)
            if slot is not None and slot >= self.sorted_hwm:
                self.sorted_hwm = slot + 1
        if slot is None:
            return False
        self._set(slot, entry)
        return True

    # -- busca ----------------------------------------------------------
    def _sorted_lower_bound(self, target: SortKey, reader: LineReader, occupied: List[int]) -> int:
        lo, hi = 0, len(occupied)
        while lo < hi:
            mid = (lo + hi) // 2
            slot = occupied[mid]
            reader.touch(self.slot_addr(slot), self.codec.slot_size)
            if self.slots[slot].sort_key < target:
                lo = mid + 1
            else:
                hi = mid
        return lo

    def search(self, lo: SortKey, hi: SortKey, reader: LineReader) -> List[Entry]:
        """Busca binária no sorted section e varredura linear no unsorted"""
        found = []
        occupied = self.valid_sorted_slots()
        if occupied:
            pos = self._sorted_lower_bound(lo, reader, occupied)
            while pos < len(occupied):
                slot = occupied[pos]
                reader.touch(self.slot_addr(slot), self.codec.slot_size)
                entry = self.slots[slot]
                if entry.sort_key > hi:
                    break
                found.append(entry)
                pos += 1
        for slot in self.valid_unsorted_slots():
            reader.touch(self.slot_addr(slot), self.codec.slot_size)
            entry = self.slots[slot]
            if lo <= entry.sort_key <= hi:
                found.append(entry)
        return found

    def remove_key(self, key: int, reader: LineReader) -> int:
        """Invalida todas as cópias da chave apenas no bitmap"""
        lo, hi = range_bounds(key, key)
        cleared = 0
        occupied = self.valid_sorted_slots()
        if occupied:
            pos = self._sorted_lower_bound(lo, reader, occupied)
            while pos < len(occupied):
                slot = occupied[pos]
                reader.touch(self.slot_addr(slot), self.codec.slot_size)
                if self.slots[slot].key != key:
                    break
                self._clear(slot)
                cleared += 1
                pos += 1
        for slot in self.valid_unsorted_slots():
            reader.touch(self.slot_addr(slot), self.codec.slot_size)
            if self.slots[slot].key == key:
                self._clear(slot)
                cleared += 1
        return cleared

    # -- reorganização --------------------------------------------------
    def rewrite(self, entries: List[Entry]) -> None:
        """Regrava a folha com entradas ordenadas (bulkload / split / merge)"""
        if len(entries) > self.capacity:
            raise ValueError(f"Folha {self.id}: {len(entries)} entradas excedem {self.capacity} slots")
        old_valid = self.valid
        self.valid = 0
        self.count = 0
        for slot, entry in enumerate(entries):
            if self.slots[slot] != entry:
                self.slots[slot] = entry
                self._dirty_slots.add(slot)
            self.valid |= 1 << slot
            self.count += 1
        n = len(entries)
        self.sorted_hwm = min(n, self.sorted_slots)
        self.unsorted_hwm = max(self.sorted_slots, n)
        if self.valid != old_valid or self._dirty_slots:
            self._meta_dirty = True

    # -- persistência ---------------------------------------------------
    def encode_meta(self) -> bytes:
        nxt_payload = self.next.payload.base + 1 if self.next else 0
        nxt_meta = self.next.meta.base + 1 if self.next else 0
        packed = META_STRUCT.pack(
            self.valid, self.sorted_hwm, self.unsorted_hwm - self.sorted_slots,
            nxt_payload, nxt_meta,
        )
        return packed.ljust(META_SIZE, b'\0')

    def _encode_slot(self, slot: int) -> bytes:
        entry = self.slots[slot]
        if entry is None:
            return bytes(self.codec.slot_size)
        return self.codec.encode(entry)

    def mark_meta_dirty(self) -> None:
        self._meta_dirty = True

    def persist(self) -> WriteReceipt:
        receipt = EMPTY_RECEIPT
        size = self.codec.slot_size
        per_line = self.device.line_size // size
        lines = sorted({slot // per_line for slot in self._dirty_slots})
        for line in lines:
            first = line * per_line
            data = b''.join(self._encode_slot(s) for s in range(first, min(first + per_line, self.capacity)))
            receipt += self.device.write(self.slot_addr(first), data)
        self._dirty_slots.clear()
        if self._meta_dirty:
            receipt += self.device.write(self.meta.base, self.encode_meta())
            self._meta_dirty = False
        return receipt

    def load(self, reader: LineReader) -> Tuple[int, int]:
        """Reconstrói o espelho em DRAM a partir do PCM; devolve os links persistidos"""
        raw_meta = reader.read(self.meta.base, META_SIZE)
        bitmap, sorted_hwm, unsorted_used, nxt_payload, nxt_meta = META_STRUCT.unpack_from(raw_meta)
        raw = reader.read(self.payload.base, self.capacity * self.codec.slot_size)
        size = self.codec.slot_size
        self.slots = [
            None if raw[i * size:(i + 1) * size] == bytes(size) and not bitmap >> i & 1
            else self.codec.decode(raw, i * size)
            for i in range(self.capacity)
        ]
        self.valid = bitmap
        self.count = bin(bitmap).count('1')
        self.sorted_hwm = sorted_hwm
        self.unsorted_hwm = self.sorted_slots + unsorted_used
        self._dirty_slots.clear()
        self._meta_dirty = False
        return nxt_payload, nxt_meta

    def pcm_image_matches(self) -> bool:
        """Compara o espelho em DRAM com a imagem gravada (sem custo)"""
        size = self.codec.slot_size
        contents = self.device.contents
        raw_meta = bytes(contents[self.meta.base:self.meta.base + META_SIZE])
        if raw_meta != self.encode_meta():
            return False
        for i in range(self.capacity):
            if self.valid >> i & 1:
                addr = self.slot_addr(i)
                if bytes(contents[addr:addr + size]) != self.codec.encode(self.slots[i]):
                    return False
        return True

    def describe(self) -> str:
        sorted_keys = [self.slots[i].key for i in self.valid_sorted_slots()]
        unsorted_keys = [self.slots[i].key for i in self.valid_unsorted_slots()]
        invalid = [
            self.slots[i].key for i in range(self.capacity)
            if self.slots[i] is not None and not self.valid >> i & 1
            and (i < self.sorted_hwm or self.sorted_slots <= i < self.unsorted_hwm)
        ]
        return f"leaf {self.id} sorted={sorted_keys} unsorted={unsorted_keys} invalid={invalid}"


# ----------------------------------------------------------------------
# Nós internos (DRAM)
# ----------------------------------------------------------------------
class InnerNode:
    """Nó interno em DRAM: parte ordenada + parte não ordenada de separadores"""

    def __init__(self):
        self.keys: List[SortKey] = []
        self.children: List = []
        self.tail_keys: List[SortKey] = []
        self.tail_children: List = []
        self.parent: Optional['InnerNode'] = None
        self.merged_into: Optional['InnerNode'] = None
        self._view: Optional[Tuple[List[SortKey], List]] = None

    def routes(self) -> Tuple[List[SortKey], List]:
        if self._view is None:
            if self.tail_keys:
                pairs = sorted(
                    zip(self.keys + self.tail_keys, self.children + self.tail_children),
                    key=lambda p: p[0],
                )
                self._view = ([k for k, _ in pairs], [c for _, c in pairs])
            else:
                self._view = (self.keys, self.children)
        return self._view

    def child_count(self) -> int:
        return len(self.children) + len(self.tail_children)

    def _touch(self) -> None:
        self._view = None

    def set_routes(self, keys: List[SortKey], children: List) -> None:
        self.keys, self.children = list(keys), list(children)
        self.tail_keys, self.tail_children = [], []
        for child in self.children:
            child.parent = self
        self._touch()

    def append_route(self, key: SortKey, child) -> None:
        self.tail_keys.append(key)
        self.tail_children.append(child)
        child.parent = self
        self._touch()

    def _locate(self, child) -> Tuple[List, List, int]:
        for keys, children in ((self.keys, self.children), (self.tail_keys, self.tail_children)):
            for i, c in enumerate(children):
                if c is child:
                    return keys, children, i
        raise KeyError("Filho não pertence ao nó")

    def key_of(self, child) -> SortKey:
        keys, _, i = self._locate(child)
        return keys[i]

    def set_key(self, child, key: SortKey) -> None:
        keys, _, i = self._locate(child)
        keys[i] = key
        self._touch()

    def repoint(self, old, new) -> None:
        _, children, i = self._locate(old)
        children[i] = new
        new.parent = self
        self._touch()

    def remove_child(self, child) -> SortKey:
        keys, children, i = self._locate(child)
        key = keys.pop(i)
        children.pop(i)
        self._touch()
        return key

    def compact(self) -> None:
        if self.tail_keys:
            keys, children = self.routes()
            self.keys, self.children = list(keys), list(children)
            self.tail_keys, self.tail_children = [], []
            self._touch()


Node = Union[LeafNode, InnerNode]


# ----------------------------------------------------------------------
# Índice principal: nós internos em DRAM, folhas no PCM
# ----------------------------------------------------------------------
class MainIndex:
    """Main index com folhas persistentes no PCM e nós internos em DRAM"""

    leaf_class = LeafNode

    def __init__(self, device: SimDevice, config: Optional[TreeConfig] = None,
                 sorted_slots: Optional[int] = None, codec=None, name: str = 'main'):
        self.device = device
        self.config = config or TreeConfig()
        self.codec = codec or EntryCodec()
        self.name = name
        self.sorted_slots = self.config.sorted_slots if sorted_slots is None else sorted_slots
        self._validate_geometry()

        self.counters: Dict[str, int] = defaultdict(int)
        self._leaf_ids = 0
        self._dirty: Set[LeafNode] = set()
        self._reader: Optional[LineReader] = None
        self._cleared: Dict[int, int] = {}
        self._underflow: Set[LeafNode] = set()

        self.anchor = device.alloc(ANCHOR_STRUCT.size)
        self.root: Node = self._new_leaf()
        self.head: LeafNode = self.root
        self._write_anchor()

    def _validate_geometry(self) -> None:
        per_line = self.device.line_size // self.codec.slot_size
        if self.config.align_sections:
            if self.config.leaf_fanout % per_line or self.sorted_slots % per_line:
                raise ValueError(
                    f"Seções devem ser múltiplas de {per_line} slots "
                    f"(fanout={self.config.leaf_fanout}, sorted={self.sorted_slots})"
                )

    # -- alocação -------------------------------------------------------
    def _new_leaf(self) -> LeafNode:
        payload = self.device.alloc(self.config.leaf_fanout * self.codec.slot_size)
        meta = self.device.alloc(META_SIZE)
        self._leaf_ids += 1
        self.counters['leaves_created'] += 1
        return self.leaf_class(self, payload, meta, self._leaf_ids)

    def _free_leaf(self, leaf: LeafNode) -> None:
        self.device.free(leaf.payload)
        self.device.free(leaf.meta)
        self._dirty.discard(leaf)
        self.counters['leaves_freed'] += 1

    def _write_anchor(self) -> None:
        data = ANCHOR_STRUCT.pack(self.head.payload.base + 1, self.head.meta.base + 1)
        self.device.write(self.anchor.base, data)

    # -- navegação ------------------------------------------------------
    def _find_leaf(self, sk: SortKey) -> LeafNode:
        node = self.root
        while isinstance(node, InnerNode):
            keys, children = node.routes()
            i = bisect.bisect_left(keys, sk)
            node = children[min(i, len(children) - 1)]
        return node

    def upper_bound(self, node: Node) -> SortKey:
        if node.parent is None:
            return INF_KEY
        return node.parent.key_of(node)

    def _resolve(self, node: Node) -> Node:
        while node.merged_into is not None:
            node = node.merged_into
        return node

    def leaves(self) -> Iterator[LeafNode]:
        leaf = self.head
        while leaf is not None:
            yield leaf
            leaf = leaf.next

    def height(self) -> int:
        h, node = 1, self.root
        while isinstance(node, InnerNode):
            node = node.routes()[1][0]
            h += 1
        return h

    # -- Algoritmo 2: bulkload -----------------------------------------
    def bulkload(self, node: Node, entries: List[Entry]) -> None:
        if not entries:
            return
        self._reader = LineReader(self.device)
        self._cleared = {}
        batch = sorted(entries, key=batch_order)
        self._bulkload(node, batch)
        self._settle()
        self._persist_dirty()
        for e in batch:
            if e.tombstone and self._cleared.get(e.key, 0) == 0:
                self.counters['absent_deletes'] += 1
                self._cleared[e.key] = -1
        self._reader = None

    def _bulkload(self, node: Node, entries: List[Entry]) -> None:
        if not entries:
            return
        node = self._resolve(node)
        if isinstance(node, LeafNode):
            self._leaf_insert(node, entries)
            return
        keys, children = node.routes()
        slices = self.slice_entries(entries, keys)
        for child, part in zip(list(children), slices):
            self._bulkload(child, part)

    @staticmethod
    def slice_entries(entries: List[Entry], keys: List[SortKey]) -> List[List[Entry]]:
        """sliceMake: fatias (lastMax, keys[i]], a primeira a partir de -inf"""
        slices: List[List[Entry]] = [[] for _ in keys]
        last = len(keys) - 1
        for e in entries:
            if e.tombstone:
                lo, hi = range_bounds(e.key, e.key)
                first = min(bisect.bisect_left(keys, lo), last)
                final = min(bisect.bisect_left(keys, hi), last)
                for i in range(first, final + 1):
                    slices[i].append(e)
            else:
                slices[min(bisect.bisect_left(keys, e.sort_key), last)].append(e)
        return slices

    # -- Algoritmo 3: inserção na folha --------------------------------
    def leaf_insert(self, leaf: LeafNode, entries: List[Entry]) -> None:
        self._reader = LineReader(self.device)
        self._cleared = {}
        self._leaf_insert(leaf, sorted(entries, key=batch_order))
        self._settle()
        self._persist_dirty()
        self._reader = None

    def _leaf_insert(self, leaf: LeafNode, entries: List[Entry]) -> None:
        n = leaf
        i = 0
        while i < len(entries):
            e = entries[i]
            target = (e.key, 0) if e.tombstone else e.sort_key
            # Merges e redistribuições do lote podem mover chaves para a esquerda
            n = self._find_leaf(target)

            if n.count < self.config.min_fill and n.parent is not None:
                self._merge(n)
                n = self._find_leaf(target)

            if e.tombstone:
                # Uma única varredura por chave já cobre todas as folhas da faixa
                if e.key not in self._cleared:
                    self._delete_from(n, e.key)
                i += 1
                continue

            if n.count > 0 and n.try_insert(e):
                self._dirty.add(n)
                i += 1
                continue

            # Sem espaço (ou folha vazia): split com o lote de inserções seguintes
            upper = self.upper_bound(n)
            j = i
            while j < len(entries) and not entries[j].tombstone and entries[j].sort_key <= upper:
                j += 1
            self._split(n, entries[i:j])
            i = j

        n = self._resolve(n)
        if n.count < self.config.min_fill and n.parent is not None:
            self._merge(n)

    def _delete_from(self, leaf: LeafNode, key: int) -> None:
        hi = (key, RID_MAX)
        node = leaf
        while node is not None:
            cleared = node.remove_key(key, self._reader)
            if cleared:
                self._dirty.add(node)
                if node.count < self.config.min_fill:
                    self._underflow.add(node)
                self._cleared[key] = self._cleared.get(key, 0) + cleared
            else:
                self._cleared.setdefault(key, 0)
            if node.next is None or self.upper_bound(node) >= hi:
                break
            node = node.next

    # -- split / merge -------------------------------------------------
    def chunk(self, entries: List[Entry]) -> List[List[Entry]]:
        """Divide entradas em folhas com fill factor (80% alinhado por padrão)"""
        n = len(entries)
        if n == 0:
            return [[]]
        cfg = self.config
        k = -(-n // cfg.fill_slots)
        while k > 1 and n // k < cfg.min_fill:
            k -= 1
        k = max(k, -(-n // cfg.leaf_fanout))
        base, extra = divmod(n, k)
        chunks, start = [], 0
        for c in range(k):
            size = base + (1 if c >= k - extra else 0)
            chunks.append(entries[start:start + size])
            start += size
        return chunks

    def _split(self, leaf: LeafNode, incoming: List[Entry]) -> None:
        combined = leaf.valid_entries(self._reader) + list(incoming)
        combined.sort(key=lambda e: e.sort_key)
        chunks = self.chunk(combined)

        leaf.rewrite(chunks[0])
        self._dirty.add(leaf)
        if len(chunks) == 1:
            return

        self.counters['splits'] += 1
        nodes = [leaf]
        for part in chunks[1:]:
            fresh = self._new_leaf()
            fresh.rewrite(part)
            self._dirty.add(fresh)
            nodes.append(fresh)
        tail_next = leaf.next
        for left, right in zip(nodes, nodes[1:]):
            left.next = right
            left.mark_meta_dirty()
        nodes[-1].next = tail_next
        nodes[-1].mark_meta_dirty()

        seps = [part[-1].sort_key for part in chunks[:-1]]
        parent = leaf.parent
        if parent is None:
            root = InnerNode()
            root.set_routes(seps + [INF_KEY], nodes)
            self.root = root
            logger.debug(f"[{self.name}] nova raiz após split da folha {leaf.id}")
            self._split_inner(root)
            return
        parent.repoint(leaf, nodes[-1])
        for sep, node in zip(seps, nodes[:-1]):
            parent.append_route(sep, node)
        if len(parent.tail_keys) > max(1, self.config.inner_fanout // 4):
            parent.compact()
        self._split_inner(parent)

    def _split_inner(self, node: InnerNode) -> None:
        """Divide nós internos acima do fanout em pedaços de tamanho parecido"""
        fanout = self.config.inner_fanout
        while node.child_count() > fanout:
            node.compact()
            keys, children = node.keys, node.children
            groups = -(-len(children) // fanout)
            size, extra = divmod(len(children), groups)
            pieces, start = [], 0
            for g in range(groups):
                end = start + size + (1 if g < extra else 0)
                pieces.append((keys[start:end], children[start:end]))
                start = end
            node.set_routes(*pieces[0])
            siblings = [node]
            for piece_keys, piece_children in pieces[1:]:
                inner = InnerNode()
                inner.set_routes(piece_keys, piece_children)
                siblings.append(inner)
            self.counters['inner_splits'] += len(pieces) - 1
            seps = [piece_keys[-1] for piece_keys, _ in pieces[:-1]]
            parent = node.parent
            if parent is None:
                root = InnerNode()
                root.set_routes(seps + [INF_KEY], siblings)
                self.root = root
                node = root
                continue
            parent.repoint(node, siblings[-1])
            for sep, sibling in zip(seps, siblings[:-1]):
                parent.append_route(sep, sibling)
            node = parent

    def _merge(self, leaf: LeafNode) -> LeafNode:
        """Une (ou redistribui) a folha com o irmão da direita, senão o da esquerda"""
        parent = leaf.parent
        _, children = parent.routes()
        idx = next(i for i, c in enumerate(children) if c is leaf)
        if idx + 1 < len(children):
            left, right = leaf, children[idx + 1]
        elif idx > 0:
            left, right = children[idx - 1], leaf
        else:
            return leaf

        combined = left.valid_entries(self._reader) + right.valid_entries(self._reader)
        combined.sort(key=lambda e: e.sort_key)

        if len(combined) <= self.config.leaf_fanout:
            left.rewrite(combined)
            left.next = right.next
            left.mark_meta_dirty()
            parent.remove_child(left)
            parent.repoint(right, left)
            right.merged_into = left
            self._dirty.add(left)
            self._free_leaf(right)
            self.counters['merges'] += 1
            if left.count < self.config.min_fill:
                self._underflow.add(left)
            self._rebalance_inner(parent)
            return left

        half = len(combined) // 2
        left.rewrite(combined[:half])
        right.rewrite(combined[half:])
        parent.set_key(left, combined[half - 1].sort_key)
        self._dirty.update((left, right))
        self.counters['redistributions'] += 1
        return left

    def _rebalance_inner(self, node: InnerNode) -> None:
        while True:
            parent = node.parent
            if parent is None:
                if node.child_count() == 1:
                    only = node.routes()[1][0]
                    only.parent = None
                    node.merged_into = only
                    self.root = only
                return
            if node.child_count() >= -(-self.config.inner_fanout // 2):
                return
            _, siblings = parent.routes()
            idx = next(i for i, c in enumerate(siblings) if c is node)
            if idx + 1 < len(siblings):
                left, right = node, siblings[idx + 1]
            elif idx > 0:
                left, right = siblings[idx - 1], node
            else:
                return
            left.compact()
            right.compact()
            keys = left.keys + right.keys
            children = left.children + right.children
            if len(children) <= self.config.inner_fanout:
                left.set_routes(keys, children)
                parent.remove_child(left)
                parent.repoint(right, left)
                right.merged_into = left
                self.counters['inner_merges'] += 1
                node = parent
                continue
            half = len(children) // 2
            left.set_routes(keys[:half], children[:half])
            right.set_routes(keys[half:], children[half:])
            parent.set_key(left, keys[half - 1])
            return

    def _settle(self) -> None:
        """Une as folhas que ficaram abaixo do mínimo durante o lote"""
        while self._underflow:
            leaf = min(self._underflow, key=lambda l: l.id)
            self._underflow.discard(leaf)
            leaf = self._resolve(leaf)
            if leaf.count >= self.config.min_fill or leaf.parent is None:
                continue
            self._merge(leaf)

    def _persist_dirty(self) -> None:
        for leaf in sorted(self._dirty, key=lambda l: l.id):
            leaf.persist()
        self._dirty.clear()

    # -- buscas ---------------------------------------------------------
    def range_search(self, lo: int, hi: int) -> List[Entry]:
        lo_sk, hi_sk = range_bounds(lo, hi)
        reader = LineReader(self.device)
        found: List[Entry] = []
        leaf = self._find_leaf(lo_sk)
        while leaf is not None:
            found.extend(leaf.search(lo_sk, hi_sk, reader))
            if self.upper_bound(leaf) >= hi_sk:
                break
            leaf = leaf.next
        found.sort(key=lambda e: e.sort_key)
        return found

    def point_search(self, key: int) -> Optional[Entry]:
        found = self.range_search(key, key)
        return found[0] if found else None

    def scan_all(self) -> Iterator[Entry]:
        for leaf in self.leaves():
            yield from leaf.valid_entries()

    def entry_count(self) -> int:
        return sum(leaf.count for leaf in self.leaves())

    # -- crash / recovery ----------------------------------------------
    def crash(self) -> None:
        """Descarta todo o estado em DRAM; só o PCM sobrevive"""
        self.root = None
        self.head = None
        self._dirty.clear()

    def recover(self) -> None:
        reader = LineReader(self.device)
        head_payload, head_meta = ANCHOR_STRUCT.unpack(reader.read(self.anchor.base, ANCHOR_STRUCT.size))
        leaves: List[LeafNode] = []
        payload_link, meta_link = head_payload, head_meta
        size = self.config.leaf_fanout * self.codec.slot_size
        while payload_link:
            self._leaf_ids += 1
            leaf = self.leaf_class(self, Region(payload_link - 1, size), Region(meta_link - 1, META_SIZE), self._leaf_ids)
            payload_link, meta_link = leaf.load(reader)
            if leaves:
                leaves[-1].next = leaf
            leaves.append(leaf)
        self.head = leaves[0]
        self._rebuild_inner(leaves)
        logger.info(f"[{self.name}] índice reconstruído a partir de {len(leaves)} folhas no PCM")

    def _rebuild_inner(self, leaves: List[LeafNode]) -> None:
        level: List[Node] = list(leaves)
        bounds: List[SortKey] = []
        for i, leaf in enumerate(leaves):
            top = leaf.max_sort_key()
            bounds.append(top if top is not None else (bounds[-1] if bounds else (0, 0)))
        bounds[-1] = INF_KEY
        for node in level:
            node.parent = None
        fanout = max(2, self.config.inner_fanout * 4 // 5)
        while len(level) > 1:
            next_level, next_bounds = [], []
            for start in range(0, len(level), fanout):
                group = level[start:start + fanout]
                group_bounds = bounds[start:start + fanout]
                if len(group) == 1 and next_level:
                    prev = next_level[-1]
                    prev.set_routes(prev.keys + group_bounds, prev.children + group)
                    next_bounds[-1] = group_bounds[-1]
                    continue
                inner = InnerNode()
                inner.set_routes(group_bounds, group)
                next_level.append(inner)
                next_bounds.append(group_bounds[-1])
            level, bounds = next_level, next_bounds
        self.root = level[0]
        self.root.parent = None

    # -- diagnóstico ----------------------------------------------------
    def dump(self) -> str:
        return "\n".join(leaf.describe() for leaf in self.leaves())

    def verify(self) -> List[str]:
        """Lista violações de layout, ocupação, ordem e persistência"""
        problems = []
        per_line = self.device.line_size // self.codec.slot_size
        in_order = []
        stack = [self.root]
        while stack:
            node = stack.pop()
            if isinstance(node, InnerNode):
                stack.extend(reversed(node.routes()[1]))
            else:
                in_order.append(node)
        chain = list(self.leaves())
        if [l.id for l in chain] != [l.id for l in in_order]:
            problems.append("encadeamento de folhas difere da ordem da árvore")
        previous_upper = None
        for leaf in chain:
            occupied = leaf.valid_sorted_slots()
            keys = [leaf.slots[i].sort_key for i in occupied]
            if keys != sorted(keys):
                problems.append(f"folha {leaf.id}: sorted section fora de ordem")
            if self.config.align_sections and (leaf.sorted_slots % per_line or leaf.capacity % per_line):
                problems.append(f"folha {leaf.id}: seções desalinhadas")
            if len(chain) > 1 and not self.config.min_fill <= leaf.count <= self.config.leaf_fanout:
                problems.append(f"folha {leaf.id}: ocupação {leaf.count}")
            upper = self.upper_bound(leaf)
            for entry in leaf.valid_entries():
                if entry.sort_key > upper or (previous_upper is not None and entry.sort_key <= previous_upper):
                    problems.append(f"folha {leaf.id}: entrada {entry.key} fora da faixa")
            previous_upper = upper
            if not leaf.pcm_image_matches():
                problems.append(f"folha {leaf.id}: espelho em DRAM difere do PCM")
        return problems

    def stats(self) -> Dict:
        result = dict(self.counters)
        result['leaves'] = sum(1 for _ in self.leaves())
        result['height'] = self.height()
        return result


# ----------------------------------------------------------------------
# Buffer tree (DRAM)
# ----------------------------------------------------------------------
@dataclass
class BufferedOp:
    purge: bool = False  # tombstone: remove as cópias do main index
    rids: List[int] = field(default_factory=list)

    def entries(self, key: int) -> List[Entry]:
        batch = [tombstone(key)] if self.purge else []
        batch.extend(Entry(key, rid) for rid in self.rids)
        return batch


class BufferTree:
    """Árvore ordenada em DRAM que acumula operações até o threshold"""

    def __init__(self, threshold: int):
        self.threshold = threshold
        self.ops: SortedDict = SortedDict()

    def __len__(self) -> int:
        return len(self.ops)

    def put(self, entry: Entry) -> None:
        if entry.tombstone:
            # Última operação vence: inserções pendentes da chave são descartadas
            self.ops[entry.key] = BufferedOp(purge=True)
            return
        op = self.ops.get(entry.key)
        if op is None:
            self.ops[entry.key] = BufferedOp(rids=[entry.rid])
        else:
            op.rids.append(entry.rid)

    def get(self, key: int) -> Optional[BufferedOp]:
        return self.ops.get(key)

    def items_in(self, lo: int, hi: int):
        for key in self.ops.irange(lo, hi):
            yield key, self.ops[key]

    def drain(self) -> List[Entry]:
        batch = []
        for key, op in self.ops.items():
            batch.extend(op.entries(key))
        self.ops.clear()
        return batch

    def clear(self) -> None:
        self.ops.clear()


def overlay(main_entries: List[Entry], buffered) -> List[Entry]:
    """Aplica operações bufferizadas sobre resultados do main index"""
    purged = set()
    extra = []
    for key, op in buffered:
        if op.purge:
            purged.add(key)
        extra.extend(Entry(key, rid) for rid in op.rids)
    result = [e for e in main_entries if e.key not in purged]
    result.extend(extra)
    result.sort(key=lambda e: e.sort_key)
    return result


class BBTree:
    """BB+tree: buffer tree em DRAM + main index com folhas de duas seções no PCM"""

    kind = 'bb'

    def __init__(self, device: SimDevice, config: Optional[TreeConfig] = None):
        self.device = device
        self.config = config or TreeConfig()
        self.main = MainIndex(device, self.config, name='bb')
        self.buffer = BufferTree(self.config.buffer_threshold)
        self._log = None
        self.flushes = 0

    def attach_log(self, log) -> None:
        self._log = log

    # -- operações bufferizadas ----------------------------------------
    def buffer_put(self, entry: Entry) -> None:
        if self._log is not None:
            if self._log.full:
                logger.warning("Entry log cheio; forçando flush do buffer")
                self.flush_buffer()
            self._log.append(entry)
        self.buffer.put(entry)
        if len(self.buffer) >= self.buffer.threshold:
            self.flush_buffer()

    def replay(self, entry: Entry) -> None:
        """Reaplica uma operação do entry log sem registrá-la de novo"""
        self.buffer.put(entry)

    def flush_buffer(self) -> None:
        batch = self.buffer.drain()
        if batch:
            self.main.bulkload(self.main.root, batch)
            self.flushes += 1
            logger.debug(f"Buffer descarregado: {len(batch)} entradas")
        if self._log is not None:
            self._log.truncate()

    # -- contrato de merge index ---------------------------------------
    def insert(self, entry: Entry) -> None:
        self.buffer_put(entry)

    def delete(self, key: int) -> None:
        self.buffer_put(tombstone(key))

    def bulk_insert(self, entries: List[Entry]) -> None:
        self.main.bulkload(self.main.root, entries)

    def range_search(self, lo: int, hi: int) -> List[Entry]:
        return overlay(self.main.range_search(lo, hi), self.buffer.items_in(lo, hi))

    def point_search(self, key: int) -> Optional[Entry]:
        found = self.range_search(key, key)
        return found[0] if found else None

    def scan_all(self) -> Iterator[Entry]:
        main_entries = list(self.main.scan_all())
        return iter(overlay(main_entries, self.buffer.ops.items()))

    def crash(self) -> None:
        self.buffer.clear()
        self.main.crash()

    def recover(self) -> None:
        self.main.recover()

    def verify(self) -> List[str]:
        return self.main.verify()

    def dump(self) -> str:
        return self.main.dump()

    def stats(self) -> Dict:
        result = self.main.stats()
        result['buffered'] = len(self.buffer)
        result['flushes'] = self.flushes
        return result

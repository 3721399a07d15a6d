import numpy as np
from dataclasses import dataclass, field, asdict
from typing import Dict, List, Optional, Set
import logging

from sortedcontainers import SortedDict

# Configure logging
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)


class DeviceConfigError(ValueError):
    pass


class AllocationError(MemoryError):
    pass


class AccessViolation(IndexError):
    pass


@dataclass
class DeviceConfig:
    """Geometria e latências do PCM simulado"""
    line_size: int = 64
    read_latency_ns: int = 50
    write_latency_ns: int = 1000
    ranks: int = 8
    rank_width: int = 8
    write_bandwidth: int = 64_000_000  # bytes/s por die, apenas reportado
    capacity_bytes: int = 64 * 1024 * 1024

    def __post_init__(self):
        if self.line_size != self.ranks * self.rank_width:
            raise DeviceConfigError(
                f"line_size ({self.line_size}) deve ser ranks x rank_width "
                f"({self.ranks} x {self.rank_width})"
            )
        if self.read_latency_ns <= 0 or self.write_latency_ns <= 0:
            raise DeviceConfigError("Latências devem ser positivas")
        if self.capacity_bytes <= 0 or self.capacity_bytes % self.line_size:
            raise DeviceConfigError(
                f"capacity_bytes ({self.capacity_bytes}) deve ser múltiplo de {self.line_size}"
            )

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass(frozen=True)
class Region:
    base: int
    length: int

    @property
    def end(self) -> int:
        return self.base + self.length


@dataclass(frozen=True)
class WriteReceipt:
    lines_flushed: int = 0
    words_modified: int = 0
    bits_modified: int = 0
    cost_ns: int = 0

    def __add__(self, other: 'WriteReceipt') -> 'WriteReceipt':
        return WriteReceipt(
            self.lines_flushed + other.lines_flushed,
            self.words_modified + other.words_modified,
            self.bits_modified + other.bits_modified,
            self.cost_ns + other.cost_ns,
        )


EMPTY_RECEIPT = WriteReceipt()


@dataclass
class DeviceStats:
    reads: int = 0
    line_flushes: int = 0
    words_modified: int = 0
    bits_modified: int = 0
    sim_time_ns: int = 0
    max_line_wear: int = 0
    wear_histogram: List[int] = field(default_factory=list)
    wear_bin_edges: List[float] = field(default_factory=list)

    def to_dict(self) -> Dict:
        return {
            'reads': self.reads,
            'line_flushes': self.line_flushes,
            'words_modified': self.words_modified,
            'bits_modified': self.bits_modified,
            'sim_time_ns': self.sim_time_ns,
            'max_line_wear': self.max_line_wear,
        }


class SimDevice:
    """PCM endereçável por byte com data-comparison writes e contabilidade de desgaste"""

    def __init__(self, config: Optional[DeviceConfig] = None):
        self.config = config or DeviceConfig()
        cfg = self.config
        self.line_size = cfg.line_size
        self.n_lines = cfg.capacity_bytes // cfg.line_size
        self.contents = bytearray(cfg.capacity_bytes)
        self._mem = np.frombuffer(self.contents, dtype=np.uint8)
        self.wear_bits = np.zeros(self.n_lines, dtype=np.int64)
        self.wear_writes = np.zeros(self.n_lines, dtype=np.int64)

        self.sim_time_ns = 0
        self.reads = 0
        self.line_flushes = 0
        self.words_modified = 0
        self.bits_modified = 0

        # Regiões vivas (base -> tamanho) e extensões livres (base -> tamanho)
        self._live = SortedDict()
        self._free = SortedDict()
        self._brk = 0

    # ------------------------------------------------------------------
    # Alocação
    # ------------------------------------------------------------------
    def alloc(self, size: int) -> Region:
        if size <= 0:
            raise ValueError(f"Tamanho de alocação inválido: {size}")
        rounded = -(-size // self.line_size) * self.line_size

        base = None
        for free_base, free_len in self._free.items():
            if free_len >= rounded:
                base = free_base
                del self._free[free_base]
                if free_len > rounded:
                    self._free[free_base + rounded] = free_len - rounded
                break

        if base is None:
            if self._brk + rounded > self.config.capacity_bytes:
                raise AllocationError(
                    f"Sem capacidade para {rounded} bytes "
                    f"(usado {self._brk} de {self.config.capacity_bytes})"
                )
            base = self._brk
            self._brk += rounded

        # Zero-fill modela o estado inicial: sem custo e sem desgaste
        self._mem[base:base + rounded] = 0
        self._live[base] = rounded
        return Region(base, rounded)

    def free(self, region: Region) -> None:
        length = self._live.get(region.base)
        if length is None or length != -(-region.length // self.line_size) * self.line_size:
            raise AccessViolation(f"Região não alocada: {region.base:#x}+{region.length}")
        del self._live[region.base]

        base = region.base
        # Coalesce com vizinhos livres
        idx = self._free.bisect_left(base)
        if idx > 0:
            prev_base = self._free.keys()[idx - 1]
            if prev_base + self._free[prev_base] == base:
                base = prev_base
                length += self._free.pop(prev_base)
        nxt = base + length
        if nxt in self._free:
            length += self._free.pop(nxt)
        if base + length == self._brk:
            self._brk = base
        else:
            self._free[base] = length

    def _check(self, addr: int, length: int) -> None:
        idx = self._live.bisect_right(addr) - 1
        if idx < 0:
            raise AccessViolation(f"Acesso fora de região viva: {addr:#x}+{length}")
        base = self._live.keys()[idx]
        if addr + length > base + self._live[base]:
            raise AccessViolation(f"Acesso fora de região viva: {addr:#x}+{length}")

    # ------------------------------------------------------------------
    # Acesso
    # ------------------------------------------------------------------
    def read(self, addr: int, length: int) -> bytes:
        if length == 0:
            return b''
        self._check(addr, length)
        first = addr // self.line_size
        last = (addr + length - 1) // self.line_size
        lines = last - first + 1
        self.reads += lines
        self.sim_time_ns += lines * self.config.read_latency_ns
        return bytes(self.contents[addr:addr + length])

    def read_line(self, line: int) -> None:
        """Cobra a leitura de uma linha inteira (usado pelo LineReader)"""
        self._check(line * self.line_size, self.line_size)
        self.reads += 1
        self.sim_time_ns += self.config.read_latency_ns

    def write(self, addr: int, data: bytes) -> WriteReceipt:
        if not data:
            return EMPTY_RECEIPT
        length = len(data)
        self._check(addr, length)

        size = self.line_size
        first = addr // size
        last = (addr + length - 1) // size
        lo = first * size
        hi = (last + 1) * size

        old = self._mem[lo:hi].copy()
        new = old.copy()
        new[addr - lo:addr - lo + length] = np.frombuffer(data, dtype=np.uint8)

        diff = np.bitwise_xor(old, new)
        n = last - first + 1
        bits_per_line = np.unpackbits(diff).reshape(n, size * 8).sum(axis=1, dtype=np.int64)
        word_dirty = diff.reshape(n, size // self.config.rank_width, self.config.rank_width).any(axis=2)
        words_per_line = word_dirty.sum(axis=1, dtype=np.int64)
        dirty_lines = words_per_line > 0

        lines_flushed = int(np.count_nonzero(dirty_lines))
        if lines_flushed == 0:
            return EMPTY_RECEIPT

        self._mem[lo:hi] = new
        self.wear_bits[first:last + 1] += bits_per_line
        self.wear_writes[first:last + 1] += dirty_lines.astype(np.int64)

        bits = int(bits_per_line.sum())
        words = int(words_per_line.sum())
        # Linhas sujas distintas são serializadas: uma write_latency por linha
        cost = lines_flushed * self.config.write_latency_ns

        self.line_flushes += lines_flushed
        self.words_modified += words
        self.bits_modified += bits
        self.sim_time_ns += cost
        return WriteReceipt(lines_flushed, words, bits, cost)

    # ------------------------------------------------------------------
    # Estatísticas
    # ------------------------------------------------------------------
    def stats(self, bins: int = 10) -> DeviceStats:
        touched = self.wear_bits[self.wear_bits > 0]
        if touched.size:
            hist, edges = np.histogram(touched, bins=bins)
            histogram, bin_edges = hist.tolist(), edges.tolist()
        else:
            histogram, bin_edges = [], []
        return DeviceStats(
            reads=self.reads,
            line_flushes=self.line_flushes,
            words_modified=self.words_modified,
            bits_modified=self.bits_modified,
            sim_time_ns=self.sim_time_ns,
            max_line_wear=int(self.wear_bits.max()) if self.n_lines else 0,
            wear_histogram=histogram,
            wear_bin_edges=bin_edges,
        )

    def reset_stats(self) -> None:
        """Zera contadores e tempo simulado; conteúdo e mapa de desgaste permanecem"""
        self.sim_time_ns = 0
        self.reads = 0
        self.line_flushes = 0
        self.words_modified = 0
        self.bits_modified = 0


class LineReader:
    """Leituras de uma operação: cada linha é cobrada uma única vez (cache da CPU)"""

    def __init__(self, device: SimDevice):
        self.device = device
        self._seen: Set[int] = set()

    def touch(self, addr: int, length: int) -> None:
        if length <= 0:
            return
        size = self.device.line_size
        for line in range(addr // size, (addr + length - 1) // size + 1):
            if line not in self._seen:
                self._seen.add(line)
                self.device.read_line(line)

    def read(self, addr: int, length: int) -> bytes:
        self.touch(addr, length)
        return bytes(self.device.contents[addr:addr + length])

    @property
    def lines_read(self) -> int:
        return len(self._seen)

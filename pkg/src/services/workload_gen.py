import math
from dataclasses import dataclass, field, asdict
from typing import Dict, Iterator, List, Optional, Tuple
import logging

import numpy as np

from src.models.entry import Entry
from src.services.intervals import IntervalSet

# Configure logging
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

PATTERN_KINDS = ('random', 'sequential', 'new_keys')
PATTERN_ALIASES = {'newkeys': 'new_keys', 'new-keys': 'new_keys'}
SEQUENTIAL_OFFSET_FRACTION = 0.0001  # início aleatório nos primeiros 0,01% do domínio

# nome -> (batches, inserts, deletes, range searches, point searches)
WORKLOAD_TABLES: Dict[str, Tuple[int, int, int, int, int]] = {
    'A': (100, 5, 5, 10, 0),
    'B': (5, 100000, 100000, 5, 0),
    'C': (10, 100000000, 100000, 20, 0),
    'D': (10, 10000000, 10000, 10, 0),
    'write': (10, 40000, 40000, 0, 20000),
    'read': (10, 10000, 10000, 0, 80000),
    'balanced': (10, 25000, 25000, 0, 50000),
}
WORKLOAD_ALIASES = {
    'write_intensive': 'write',
    'read_intensive': 'read',
    'a': 'A', 'b': 'B', 'c': 'C', 'd': 'D',
}


class WorkloadExhausted(Exception):
    pass


def normalize_pattern(kind: str) -> str:
    kind = PATTERN_ALIASES.get(kind, kind)
    if kind not in PATTERN_KINDS:
        raise ValueError(f"Padrão desconhecido: {kind} (use {', '.join(PATTERN_KINDS)})")
    return kind


def normalize_workload(name: str) -> str:
    name = WORKLOAD_ALIASES.get(name, name)
    if name not in WORKLOAD_TABLES:
        raise ValueError(f"Workload desconhecido: {name} (use {', '.join(WORKLOAD_TABLES)})")
    return name


def rows_for(total_rows: int, selectivity: float) -> int:
    """rows = totalRows * selectivity, nunca menor que 1"""
    return max(1, math.floor(total_rows * selectivity))


@dataclass
class PatternSpec:
    kind: str = 'random'
    selectivity: float = 0.05
    domain: int = 1_000_000
    seed: int = 0

    def __post_init__(self):
        self.kind = normalize_pattern(self.kind)
        if not 0 < self.selectivity <= 1:
            raise ValueError(f"Seletividade fora de (0, 1]: {self.selectivity}")
        if self.domain < 1:
            raise ValueError(f"Domínio vazio: {self.domain}")

    @property
    def rows(self) -> int:
        return rows_for(self.domain, self.selectivity)

    def min_queries(self) -> int:
        return -(-self.domain // self.rows)


@dataclass
class PatternState:
    rng: np.random.Generator
    start: Optional[int] = None
    cells: Optional[np.ndarray] = None
    cursor: int = 0
    last_hi: Optional[int] = None
    emitted: IntervalSet = field(default_factory=IntervalSet)

    @classmethod
    def for_spec(cls, spec: PatternSpec) -> 'PatternState':
        return cls(rng=np.random.default_rng(spec.seed))


def random_range(rng: np.random.Generator, domain: int, rows: int) -> Tuple[int, int]:
    """Início uniforme; faixas que cruzam as bordas são cortadas no domínio"""
    start = int(rng.integers(-(rows - 1), domain))
    return max(0, start), min(domain - 1, start + rows - 1)


def next_random_query(spec: PatternSpec, state: PatternState) -> Tuple[int, int]:
    return random_range(state.rng, spec.domain, spec.rows)


def _sequential_offset(spec: PatternSpec, state: PatternState) -> int:
    window = max(1, math.ceil(spec.domain * SEQUENTIAL_OFFSET_FRACTION))
    return min(int(state.rng.integers(0, window)), spec.domain - spec.rows)


def next_sequential_query(spec: PatternSpec, state: PatternState) -> Tuple[int, int]:
    rows = spec.rows
    if state.start is not None and state.start + rows > spec.domain:
        # Fecha a rodada no fim do domínio antes de recomeçar
        if state.last_hi is not None and state.last_hi < spec.domain - 1:
            state.last_hi = spec.domain - 1
            return spec.domain - rows, spec.domain - 1
        state.start = None
    if state.start is None:
        state.start = _sequential_offset(spec, state)
    lo = state.start
    state.start += max(1, rows // 2)
    state.last_hi = lo + rows - 1
    return lo, state.last_hi


def next_new_keys_query(spec: PatternSpec, state: PatternState) -> Tuple[int, int]:
    rows = spec.rows
    if state.cells is None:
        state.cells = state.rng.permutation(spec.min_queries())
    if state.cursor >= len(state.cells):
        raise WorkloadExhausted(f"Domínio de {spec.domain} chaves esgotado")
    cell = int(state.cells[state.cursor])
    state.cursor += 1
    lo = cell * rows
    hi = min(spec.domain, lo + rows) - 1
    state.emitted.add(lo, hi)
    return lo, hi


_NEXT_QUERY = {
    'random': next_random_query,
    'sequential': next_sequential_query,
    'new_keys': next_new_keys_query,
}


def query_stream(spec: PatternSpec, state: Optional[PatternState] = None) -> Iterator[Tuple[int, int]]:
    """Consultas do padrão até o fim do domínio (new keys) ou indefinidamente"""
    state = state or PatternState.for_spec(spec)
    step = _NEXT_QUERY[spec.kind]
    while True:
        try:
            yield step(spec, state)
        except WorkloadExhausted:
            return


# ----------------------------------------------------------------------
# Workloads dinâmicos
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class Op:
    """Operação do trace: INS key rid | DEL key | RQ lo hi | PQ key"""
    kind: str
    a: int
    b: int = 0

    def to_line(self) -> str:
        if self.kind in ('INS', 'RQ'):
            return f"{self.kind} {self.a} {self.b}"
        return f"{self.kind} {self.a}"


@dataclass
class WorkloadSpec:
    name: str = 'A'
    selectivity: float = 0.05
    scale: int = 1
    domain: int = 1_000_000
    seed: int = 0
    batches: Optional[int] = None
    inserts: Optional[int] = None
    deletes: Optional[int] = None
    range_searches: Optional[int] = None
    point_searches: Optional[int] = None

    def __post_init__(self):
        self.name = normalize_workload(self.name)
        if self.scale < 1:
            raise ValueError(f"scale deve ser >= 1: {self.scale}")
        if not 0 < self.selectivity <= 1:
            raise ValueError(f"Seletividade fora de (0, 1]: {self.selectivity}")
        batches, ins, dels, rq, pq = WORKLOAD_TABLES[self.name]
        self.batches = batches if self.batches is None else self.batches
        self.inserts = self._scaled(ins) if self.inserts is None else self.inserts
        self.deletes = self._scaled(dels) if self.deletes is None else self.deletes
        self.range_searches = self._scaled(rq) if self.range_searches is None else self.range_searches
        self.point_searches = self._scaled(pq) if self.point_searches is None else self.point_searches

    def _scaled(self, count: int) -> int:
        if count <= 0:
            return 0
        return max(1, count // self.scale)

    def batch_size(self) -> int:
        return self.inserts + self.deletes + self.range_searches + self.point_searches

    def total_inserts(self) -> int:
        return self.batches * self.inserts

    def to_dict(self) -> Dict:
        return asdict(self)


def interleave(counts: List[int]) -> List[int]:
    """Round-robin proporcional: cada tipo ocupa posições (i + 0.5) / n do lote"""
    slots = []
    for kind, n in enumerate(counts):
        slots.extend(((i + 0.5) / n, kind) for i in range(n))
    slots.sort()
    return [kind for _, kind in slots]


class _LiveKeys:
    """Chaves vivas com remoção uniforme em O(1)"""

    def __init__(self, keys: List[int], rng: np.random.Generator):
        self.keys = keys
        self.rng = rng

    def __len__(self) -> int:
        return len(self.keys)

    def add(self, key: int) -> None:
        self.keys.append(key)

    def pick(self) -> int:
        return self.keys[int(self.rng.integers(0, len(self.keys)))]

    def take(self) -> int:
        idx = int(self.rng.integers(0, len(self.keys)))
        key = self.keys[idx]
        self.keys[idx] = self.keys[-1]
        self.keys.pop()
        return key


def make_workload(spec: WorkloadSpec) -> List[Op]:
    """Trace determinístico: (spec, seed) definem cada operação"""
    rng = np.random.default_rng(spec.seed)
    live = _LiveKeys(list(range(spec.domain)), rng)
    next_key = spec.domain
    rows = rows_for(spec.domain, spec.selectivity)
    order = interleave([spec.inserts, spec.deletes, spec.range_searches, spec.point_searches])

    ops: List[Op] = []
    for _ in range(spec.batches):
        for kind in order:
            if kind == 0:
                ops.append(Op('INS', next_key, next_key))
                live.add(next_key)
                next_key += 1
            elif kind == 1:
                if len(live):
                    ops.append(Op('DEL', live.take()))
            elif kind == 2:
                ops.append(Op('RQ', *random_range(rng, spec.domain, rows)))
            else:
                ops.append(Op('PQ', live.pick() if len(live) else 0))
    logger.info(f"Workload {spec.name}: {len(ops)} operações em {spec.batches} batches")
    return ops


def make_dataset(size: int, seed: int = 0) -> List[Entry]:
    """Chaves densas 0..N-1 em ordem aleatória; rid = chave"""
    rng = np.random.default_rng(seed)
    return [Entry(int(k), int(k)) for k in rng.permutation(size)]


# ----------------------------------------------------------------------
# Exportação / importação de traces
# ----------------------------------------------------------------------
def format_trace(ops: List[Op]) -> str:
    return "".join(op.to_line() + "\n" for op in ops)


def parse_trace(text: str) -> List[Op]:
    ops = []
    arity = {'INS': 2, 'DEL': 1, 'RQ': 2, 'PQ': 1}
    for lineno, line in enumerate(text.splitlines(), start=1):
        parts = line.split()
        if not parts or parts[0].startswith('#'):
            continue
        kind = parts[0].upper()
        if kind not in arity or len(parts) != arity[kind] + 1:
            raise ValueError(f"Linha {lineno} inválida no trace: {line!r}")
        try:
            values = [int(p) for p in parts[1:]]
        except ValueError:
            raise ValueError(f"Linha {lineno} inválida no trace: {line!r}")
        if kind == 'RQ' and values[0] > values[1]:
            raise ValueError(f"Linha {lineno}: faixa invertida")
        ops.append(Op(kind, *values))
    return ops


def write_trace(ops: List[Op], path: str) -> None:
    with open(path, 'w') as f:
        f.write(format_trace(ops))
    logger.info(f"Trace gravado em {path} ({len(ops)} operações)")


def read_trace(path: str) -> List[Op]:
    with open(path) as f:
        return parse_trace(f.read())

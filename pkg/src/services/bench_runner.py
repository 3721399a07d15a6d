import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict, fields, replace
from typing import Dict, List
import logging

import pandas as pd

from src.models.entry import Entry
from src.services.baseline_indexes import INDEX_KINDS, build_index
from src.services.baseline_merging import (
    INVALIDATION_KINDS, AdaptiveMerging, ExtendedAdaptiveMerging, MergingConfig,
)
from src.services.bbtree import BBTree, TreeConfig
from src.services.harness_config import ConfigError
from src.services.pam_framework import FrameworkConfig, PAMFramework
from src.services.pcm_device import DeviceConfig, SimDevice
from src.services.workload_gen import (
    Op, PatternSpec, WorkloadSpec, make_dataset, make_workload, normalize_pattern,
    normalize_workload, query_stream, read_trace, write_trace,
)

# Configure logging
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

METHODS = ('am', 'eam', 'pam')
MODES = ('convergence', 'dynamic')
INDEX_WORKLOADS = ('write', 'read', 'balanced')
SWEEP_SELECTIVITIES = (0.01, 0.02, 0.03, 0.04, 0.05)


@dataclass
class ExperimentConfig:
    """Configuração de uma execução (um ResultRow)"""
    mode: str = 'convergence'
    method: str = 'pam'
    index: str = 'bb'
    invalidation: str = 'bitmap'
    pattern: str = 'random'
    selectivity: float = 0.05
    workload: str = ''
    scale: int = 100
    rows: int = 1_000_000
    seed: int = 0
    repetition: int = 0
    query_cap: int = 0  # 0 = 10x o mínimo analítico
    trace_in: str = ''
    trace_out: str = ''
    device: Dict = field(default_factory=dict)
    tree: Dict = field(default_factory=dict)
    framework: Dict = field(default_factory=dict)
    merging: Dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"Modo desconhecido: {self.mode}")
        if self.method not in METHODS:
            raise ConfigError(f"Método desconhecido: {self.method} (use {', '.join(METHODS)})")
        if self.index not in INDEX_KINDS:
            raise ConfigError(f"Índice desconhecido: {self.index} (use {', '.join(INDEX_KINDS)})")
        if self.invalidation not in INVALIDATION_KINDS:
            raise ConfigError(f"Invalidação desconhecida: {self.invalidation}")
        if self.method == 'eam' and self.invalidation != 'bitmap':
            raise ConfigError("eAM usa sempre invalidação por bitmap")
        if self.rows < 1:
            raise ConfigError("rows deve ser positivo")
        if not 0 < self.selectivity <= 1:
            raise ConfigError(f"Seletividade fora de (0, 1]: {self.selectivity}")
        try:
            self.pattern = normalize_pattern(self.pattern)
            if self.workload:
                self.workload = normalize_workload(self.workload)
        except ValueError as e:
            raise ConfigError(str(e))
        if self.mode == 'dynamic' and not self.workload and not self.trace_in:
            raise ConfigError("Modo dynamic exige --workload ou --trace-in")

    @property
    def index_only(self) -> bool:
        return self.mode == 'dynamic' and self.workload in INDEX_WORKLOADS

    def label(self) -> str:
        if self.index_only:
            return f"index-{self.index}"
        if self.method == 'pam':
            return f"pam-{self.index}"
        if self.method == 'am':
            return f"am-{self.invalidation}"
        return 'eam'


@dataclass
class ResultRow:
    mode: str = ''
    method: str = ''
    index: str = ''
    invalidation: str = ''
    pattern: str = ''
    selectivity: float = 0.0
    workload: str = ''
    scale: int = 0
    rows: int = 0
    seed: int = 0
    repetition: int = 0
    sim_time_ns: int = 0
    init_sim_time_ns: int = 0
    host_wall_ms: float = 0.0
    reads: int = 0
    line_flushes: int = 0
    words_modified: int = 0
    bits_modified: int = 0
    max_line_wear: int = 0
    invalidation_ns: int = 0
    operations: int = 0
    queries_to_convergence: int = 0
    converged: bool = False

    @classmethod
    def from_record(cls, record: Dict) -> 'ResultRow':
        values = {}
        for f in fields(cls):
            raw = record.get(f.name, f.default)
            if f.type in (bool, 'bool'):
                values[f.name] = raw if isinstance(raw, bool) else str(raw).lower() == 'true'
            elif f.type in (int, 'int'):
                values[f.name] = int(raw)
            elif f.type in (float, 'float'):
                values[f.name] = float(raw)
            else:
                values[f.name] = '' if raw is None else str(raw)
        return cls(**values)


ROW_FIELDS = [f.name for f in fields(ResultRow)]


# ----------------------------------------------------------------------
# Montagem
# ----------------------------------------------------------------------
def estimate_capacity(config: ExperimentConfig) -> int:
    """Bytes de PCM para partições, índice, metadados e journals"""
    inserts = 0
    if config.mode == 'dynamic' and config.workload:
        spec = WorkloadSpec(config.workload, config.selectivity, config.scale, config.rows, config.seed)
        inserts = spec.total_inserts()
    entries = config.rows + inserts
    per_entry = 16 + 160 if config.method == 'am' else 16 + 80
    line = DeviceConfig().line_size
    total = entries * per_entry + 8 * 1024 * 1024
    return -(-total // line) * line


def build_device(config: ExperimentConfig) -> SimDevice:
    overrides = dict(config.device)
    overrides.setdefault('capacity_bytes', estimate_capacity(config))
    return SimDevice(DeviceConfig(**overrides))


def build_method(config: ExperimentConfig, device: SimDevice):
    tree_config = TreeConfig(**config.tree) if config.tree else None
    framework = dict(config.framework)
    if config.method == 'pam':
        return PAMFramework(device, config.index, FrameworkConfig(**framework), tree_config)
    merging = MergingConfig(
        partition_capacity=framework.get('partition_capacity', MergingConfig.partition_capacity),
        invalidation=config.invalidation,
        **config.merging,
    )
    if config.method == 'am':
        return AdaptiveMerging(device, merging)
    return ExtendedAdaptiveMerging(device, merging, tree_config)


def _flush_pending(target) -> None:
    index = getattr(target, 'index', target)
    if isinstance(index, BBTree):
        index.flush_buffer()


def _row(config: ExperimentConfig, device: SimDevice, init_ns: int, wall_ms: float,
         operations: int, queries: int, converged: bool, invalidation_ns: int) -> ResultRow:
    stats = device.stats()
    if config.index_only:
        method, invalidation, index = 'index', '', config.index
    elif config.method == 'pam':
        method, invalidation, index = 'pam', 'journal', config.index
    elif config.method == 'am':
        method, invalidation, index = 'am', config.invalidation, 'pbt'
    else:
        method, invalidation, index = 'eam', 'bitmap', 'ub'
    return ResultRow(
        mode=config.mode, method=method, index=index, invalidation=invalidation,
        pattern=config.pattern if config.mode == 'convergence' else '',
        selectivity=config.selectivity, workload=config.workload, scale=config.scale,
        rows=config.rows, seed=config.seed, repetition=config.repetition,
        sim_time_ns=stats.sim_time_ns, init_sim_time_ns=init_ns, host_wall_ms=round(wall_ms, 3),
        reads=stats.reads, line_flushes=stats.line_flushes, words_modified=stats.words_modified,
        bits_modified=stats.bits_modified, max_line_wear=stats.max_line_wear,
        invalidation_ns=invalidation_ns, operations=operations,
        queries_to_convergence=queries, converged=converged,
    )


# ----------------------------------------------------------------------
# Experimentos
# ----------------------------------------------------------------------
def run_convergence(config: ExperimentConfig) -> ResultRow:
    """Consultas do padrão até todas as partições serem liberadas (ou o limite)"""
    started = time.perf_counter()
    device = build_device(config)
    method = build_method(config, device)
    method.initialize(make_dataset(config.rows, config.seed))
    init_ns = device.sim_time_ns
    device.reset_stats()

    spec = PatternSpec(config.pattern, config.selectivity, config.rows, config.seed)
    cap = config.query_cap or 10 * spec.min_queries()
    queries = 0
    for lo, hi in query_stream(spec):
        if queries >= cap or method.converged():
            break
        method.search(lo, hi)
        queries += 1
    converged = method.converged()
    if not converged:
        logger.warning(f"{config.label()}: sem convergência após {queries} consultas (limite {cap})")

    wall_ms = (time.perf_counter() - started) * 1000
    row = _row(config, device, init_ns, wall_ms, queries, queries, converged,
               method.stats().get('invalidation_ns', 0))
    logger.info(f"{config.label()} {config.pattern}: {row.sim_time_ns} ns, {queries} consultas")
    return row


def apply_op(target, op: Op, index_only: bool = False) -> None:
    if op.kind == 'INS':
        target.insert(Entry(op.a, op.b))
    elif op.kind == 'DEL':
        target.delete(op.a)
    elif op.kind == 'RQ':
        if index_only:
            target.range_search(op.a, op.b)
        else:
            target.search(op.a, op.b)
    elif op.kind == 'PQ':
        if index_only:
            target.point_search(op.a)
        else:
            target.search(op.a, op.a)
    else:
        raise ValueError(f"Operação desconhecida: {op.kind}")


def load_ops(config: ExperimentConfig) -> List[Op]:
    if config.trace_in:
        ops = read_trace(config.trace_in)
    else:
        spec = WorkloadSpec(config.workload, config.selectivity, config.scale, config.rows, config.seed)
        ops = make_workload(spec)
    if config.trace_out:
        write_trace(ops, config.trace_out)
    return ops


def run_dynamic(config: ExperimentConfig) -> ResultRow:
    """Reproduz um trace com modificações intercaladas às buscas"""
    started = time.perf_counter()
    device = build_device(config)
    dataset = make_dataset(config.rows, config.seed)
    if config.index_only:
        tree_config = TreeConfig(**config.tree) if config.tree else None
        target = build_index(config.index, device, tree_config)
        target.bulk_insert(sorted(dataset, key=lambda e: e.sort_key))
    else:
        target = build_method(config, device)
        target.initialize(dataset)
    init_ns = device.sim_time_ns
    device.reset_stats()

    ops = load_ops(config)
    for op in ops:
        apply_op(target, op, config.index_only)
    _flush_pending(target)

    wall_ms = (time.perf_counter() - started) * 1000
    converged = target.converged() if hasattr(target, 'converged') else True
    invalidation_ns = 0 if config.index_only else target.stats().get('invalidation_ns', 0)
    row = _row(config, device, init_ns, wall_ms, len(ops), 0, converged, invalidation_ns)
    logger.info(f"{config.label()} workload {config.workload or config.trace_in}: {row.sim_time_ns} ns")
    return row


def run_experiment(config: ExperimentConfig) -> ResultRow:
    if config.mode == 'convergence':
        return run_convergence(config)
    return run_dynamic(config)


def run_many(configs: List[ExperimentConfig], jobs: int = 1) -> List[ResultRow]:
    """Executa configurações independentes; cada uma com dispositivo próprio"""
    if jobs <= 1 or len(configs) <= 1:
        return [run_experiment(c) for c in configs]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(run_experiment, configs))


def sweep_configs(config: ExperimentConfig) -> List[ExperimentConfig]:
    return [replace(config, selectivity=s) for s in SWEEP_SELECTIVITIES]


# ----------------------------------------------------------------------
# Saída
# ----------------------------------------------------------------------
def rows_frame(rows: List[ResultRow]) -> pd.DataFrame:
    return pd.DataFrame([asdict(r) for r in rows], columns=ROW_FIELDS)


def emit_csv(rows: List[ResultRow], path: str) -> None:
    rows_frame(rows).to_csv(path, index=False)
    logger.info(f"CSV gravado em {path} ({len(rows)} linhas)")


def read_csv(path: str) -> List[ResultRow]:
    frame = pd.read_csv(path, keep_default_na=False)
    return [ResultRow.from_record(record) for record in frame.to_dict('records')]


def _series(row: ResultRow) -> str:
    if row.method == 'pam':
        return f"pam-{row.index}"
    if row.method == 'index':
        return row.index
    return row.method


def plot_groups(rows: List[ResultRow]) -> pd.DataFrame:
    """Séries por figura (método x métrica), prontas para plotagem externa"""
    records = []
    for row in rows:
        if row.mode == 'convergence':
            figure, x = f"convergence-{row.pattern}", row.selectivity
        elif row.method == 'index':
            figure, x = f"index-{row.workload}", row.scale
        else:
            figure, x = f"workload-{row.workload}", row.selectivity
        for metric in ('sim_time_ns', 'bits_modified', 'line_flushes', 'reads'):
            records.append({'figure': figure, 'series': _series(row), 'x': x,
                            'metric': metric, 'value': getattr(row, metric)})
        if row.method == 'am' and row.mode == 'convergence':
            records.append({'figure': 'invalidation', 'series': row.invalidation, 'x': row.selectivity,
                            'metric': 'invalidation_ns', 'value': row.invalidation_ns})
    frame = pd.DataFrame(records, columns=['figure', 'series', 'x', 'metric', 'value'])
    if frame.empty:
        return frame
    return frame.groupby(['figure', 'series', 'x', 'metric'], as_index=False)['value'].mean()


def emit_plotdata(rows: List[ResultRow], path: str) -> None:
    plot_groups(rows).to_csv(path, index=False)
    logger.info(f"Dados de plotagem gravados em {path}")

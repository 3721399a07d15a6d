"""
Harness de linha de comando: python -m src.cli --method pam --index bb --pattern random
"""

import argparse
import logging
import sys
from dataclasses import replace
from typing import List, Optional

from src.services.bench_runner import (
    ExperimentConfig, emit_csv, emit_plotdata, run_many, sweep_configs,
)
from src.services.harness_config import load_config_file

# Configure logging
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

WORKLOAD_CHOICES = ['A', 'B', 'C', 'D', 'write', 'read', 'balanced']


def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    p = argparse.ArgumentParser('pam-bench', description='Adaptive merging em PCM simulado')
    p.add_argument('--method', choices=['am', 'eam', 'pam'], default='pam')
    p.add_argument('--index', choices=['bb', 'sb', 'ub'], default='bb')
    p.add_argument('--invalidation', choices=['flag', 'bitmap', 'journal'], default='bitmap')
    p.add_argument('--pattern', choices=['random', 'sequential', 'newkeys'], default='random')
    p.add_argument('--selectivity', type=float, default=5.0, help='Seletividade em %% (0-100]')
    p.add_argument('--workload', choices=WORKLOAD_CHOICES, help='Executa o modo dynamic')
    p.add_argument('--scale', type=int, default=100, help='Divisor das contagens dos workloads')
    p.add_argument('--rows', type=int, default=1_000_000, help='Entradas do dataset')
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--repetitions', type=int, default=1)
    p.add_argument('--query-cap', type=int, default=0, help='Limite de consultas (0 = 10x o mínimo)')
    p.add_argument('--sweep', action='store_true', help='Seletividade de 1%% a 5%%')
    p.add_argument('--csv', type=str, help='Arquivo CSV de resultados')
    p.add_argument('--plotdata', type=str, help='Arquivo CSV com séries por figura')
    p.add_argument('--trace-in', type=str, help='Reproduz um trace gravado')
    p.add_argument('--trace-out', type=str, help='Grava o trace gerado')
    p.add_argument('--config', type=str, help='Arquivo key=value com parâmetros do dispositivo/índice')
    p.add_argument('--jobs', type=int, default=1, help='Configurações executadas em paralelo')
    p.add_argument('--log-level', default='INFO', choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'])
    return p.parse_args(argv)


def build_configs(args: argparse.Namespace) -> List[ExperimentConfig]:
    sections = load_config_file(args.config) if args.config else {}
    mode = 'dynamic' if (args.workload or args.trace_in) else 'convergence'
    base = ExperimentConfig(
        mode=mode,
        method=args.method,
        index=args.index,
        invalidation='bitmap' if args.method == 'eam' else args.invalidation,
        pattern=args.pattern,
        selectivity=args.selectivity / 100.0,
        workload=args.workload or '',
        scale=args.scale,
        rows=args.rows,
        seed=args.seed,
        query_cap=args.query_cap,
        trace_in=args.trace_in or '',
        trace_out=args.trace_out or '',
        device=sections.get('device', {}),
        tree=sections.get('tree', {}),
        framework=sections.get('framework', {}),
        merging=sections.get('merging', {}),
    )
    configs = sweep_configs(base) if args.sweep else [base]
    expanded = []
    for config in configs:
        for rep in range(args.repetitions):
            expanded.append(replace(config, repetition=rep, seed=config.seed + rep))
    return expanded


def main(argv: Optional[List[str]] = None) -> int:
    args = parse_args(argv)
    logging.getLogger().setLevel(args.log_level)
    try:
        configs = build_configs(args)
        rows = run_many(configs, jobs=args.jobs)
        if args.csv:
            emit_csv(rows, args.csv)
        if args.plotdata:
            emit_plotdata(rows, args.plotdata)
        for row in rows:
            print(f"{row.method}\t{row.index}\t{row.invalidation}\t{row.pattern or row.workload}\t"
                  f"sel={row.selectivity:.4f}\tsim_time_ns={row.sim_time_ns}\t"
                  f"bits={row.bits_modified}\tconverged={row.converged}")
        return 0
    except ValueError as e:
        logger.error(f"Erro de configuração: {e}")
        print(f"erro: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        logger.error(f"Erro de E/S: {e}")
        print(f"erro: {e}", file=sys.stderr)
        return 3


if __name__ == '__main__':
    sys.exit(main())

from dataclasses import asdict, fields
from flask import Blueprint, jsonify, request
from src.services.bench_runner import ExperimentConfig, run_convergence, run_dynamic
from src.services.bbtree import TreeConfig
from src.services.pam_framework import FrameworkConfig
from src.services.baseline_merging import MergingConfig
from src.services.pcm_device import DeviceConfig
from src.main import db
from src.models.experiment import ExperimentResult
import logging

# Configure logging
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

bench_bp = Blueprint('bench', __name__)

# Execuções via HTTP usam datasets menores por padrão
HTTP_DEFAULT_ROWS = 100_000
CONFIG_FIELDS = {f.name for f in fields(ExperimentConfig)} - {'mode', 'trace_in', 'trace_out'}


def _config_from_request(mode: str) -> ExperimentConfig:
    data = request.get_json(silent=True) or {}
    unknown = set(data) - CONFIG_FIELDS
    if unknown:
        raise ValueError(f"Parâmetros desconhecidos: {', '.join(sorted(unknown))}")
    data.setdefault('rows', HTTP_DEFAULT_ROWS)
    return ExperimentConfig(mode=mode, **data)


def _run_and_store(mode: str, runner):
    try:
        config = _config_from_request(mode)
        row = runner(config)

        # Salva o resultado no banco
        record = ExperimentResult.from_row(row)
        db.session.add(record)
        db.session.commit()

        return jsonify({
            'success': True,
            'data': record.to_dict()
        })

    except ValueError as e:
        logger.error(f"Configuração inválida ({mode}): {e}")
        return jsonify({
            'success': False,
            'error': str(e)
        }), 400
    except Exception as e:
        logger.error(f"Erro ao executar experimento {mode}: {e}")
        return jsonify({
            'success': False,
            'error': str(e)
        }), 500


@bench_bp.route('/convergence', methods=['POST'])
def convergence():
    """Executa um experimento de convergência e armazena o resultado"""
    return _run_and_store('convergence', run_convergence)


@bench_bp.route('/dynamic', methods=['POST'])
def dynamic():
    """Executa um workload dinâmico e armazena o resultado"""
    return _run_and_store('dynamic', run_dynamic)


@bench_bp.route('/results', methods=['GET'])
def list_results():
    """Lista resultados armazenados (filtros opcionais: method, mode)"""
    try:
        limit = request.args.get('limit', 100, type=int)
        query = ExperimentResult.query
        method = request.args.get('method')
        if method:
            query = query.filter(ExperimentResult.method == method)
        mode = request.args.get('mode')
        if mode:
            query = query.filter(ExperimentResult.mode == mode)
        results = query.order_by(ExperimentResult.created_at.desc()).limit(min(limit, 1000)).all()

        return jsonify({
            'success': True,
            'data': [r.to_dict() for r in results],
            'count': len(results)
        })

    except Exception as e:
        logger.error(f"Erro ao listar resultados: {e}")
        return jsonify({
            'success': False,
            'error': str(e)
        }), 500


@bench_bp.route('/defaults', methods=['GET'])
def defaults():
    """Configuração padrão do dispositivo, índice e frameworks"""
    try:
        experiment = asdict(ExperimentConfig())
        experiment['rows'] = HTTP_DEFAULT_ROWS
        return jsonify({
            'success': True,
            'data': {
                'experiment': experiment,
                'device': DeviceConfig().to_dict(),
                'tree': asdict(TreeConfig()),
                'framework': FrameworkConfig().to_dict(),
                'merging': MergingConfig().to_dict()
            }
        })

    except Exception as e:
        logger.error(f"Erro ao obter configuração padrão: {e}")
        return jsonify({
            'success': False,
            'error': str(e)
        }), 500

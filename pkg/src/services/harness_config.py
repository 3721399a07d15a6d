from typing import Dict
import logging

# Configure logging
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


# chave -> (seção, tipo)
CONFIG_KEYS = {
    'line_size': ('device', int),
    'read_latency_ns': ('device', int),
    'write_latency_ns': ('device', int),
    'ranks': ('device', int),
    'rank_width': ('device', int),
    'write_bandwidth': ('device', int),
    'capacity_bytes': ('device', int),
    'leaf_fanout': ('tree', int),
    'inner_fanout': ('tree', int),
    'sorted_slots': ('tree', int),
    'fill_slots': ('tree', int),
    'buffer_threshold': ('tree', int),
    'partition_capacity': ('framework', int),
    'journal_coalesce': ('framework', bool),
    'memory_pool_capacity': ('merging', int),
}

_TRUE = {'1', 'true', 'yes', 'on'}
_FALSE = {'0', 'false', 'no', 'off'}


def _convert(key: str, raw: str, kind: type):
    if kind is bool:
        lowered = raw.lower()
        if lowered in _TRUE:
            return True
        if lowered in _FALSE:
            return False
        raise ConfigError(f"Valor booleano inválido para {key}: {raw!r}")
    try:
        return int(raw.replace('_', ''), 0)
    except ValueError:
        raise ConfigError(f"Valor inteiro inválido para {key}: {raw!r}")


def parse_config(text: str) -> Dict[str, Dict]:
    """Lê linhas key=value e agrupa por seção (device, tree, framework, merging)"""
    sections: Dict[str, Dict] = {'device': {}, 'tree': {}, 'framework': {}, 'merging': {}}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            raise ConfigError(f"Linha {lineno}: esperado key=value, obtido {line!r}")
        key, raw = (part.strip() for part in line.split('=', 1))
        if key not in CONFIG_KEYS:
            raise ConfigError(f"Linha {lineno}: chave desconhecida {key!r}")
        section, kind = CONFIG_KEYS[key]
        sections[section][key] = _convert(key, raw, kind)
    return sections


def load_config_file(path: str) -> Dict[str, Dict]:
    try:
        with open(path) as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"Não foi possível ler {path}: {e}")
    sections = parse_config(text)
    logger.info(f"Configuração carregada de {path}")
    return sections

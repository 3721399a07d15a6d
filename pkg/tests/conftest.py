import os
import string

import pytest

# Banco em memória para os testes de rotas (precisa vir antes de importar src.main)
os.environ.setdefault('DATABASE_URL', 'sqlite://')

from src.models.entry import Entry
from src.services.bbtree import TreeConfig
from src.services.pcm_device import DeviceConfig, SimDevice

WALKTHROUGH_LETTERS = "bszeiackquxnpldfrtmz"


def letter_key(letter: str) -> int:
    return string.ascii_lowercase.index(letter) + 1


def keys_of(entries):
    return [e.key for e in entries]


@pytest.fixture
def device():
    return SimDevice(DeviceConfig(capacity_bytes=8 * 1024 * 1024))


@pytest.fixture
def small_tree():
    # Folhas de 8 slots: seções de 4 (uma linha cada)
    return TreeConfig(leaf_fanout=8, inner_fanout=4, sorted_slots=4, fill_slots=6, buffer_threshold=16)


@pytest.fixture
def walkthrough_tree():
    # fanout 4 como no exemplo de modificação do índice
    return TreeConfig(leaf_fanout=4, inner_fanout=4, sorted_slots=3, fill_slots=3,
                      buffer_threshold=7, align_sections=False)


@pytest.fixture
def walkthrough_dataset():
    """20 chaves (b,s,z,...,m,z) com rid = posição no dataset"""
    return [Entry(letter_key(c), rid) for rid, c in enumerate(WALKTHROUGH_LETTERS)]

#!/usr/bin/env python3
"""
Script para inicializar o banco de resultados do harness de adaptive merging
"""

import os
import sys

# Adiciona o diretório raiz ao path
sys.path.insert(0, os.path.dirname(__file__))

from src.main import app, db
from src.models.experiment import ExperimentResult


def init_database(drop: bool = False):
    """Cria a tabela de resultados (opcionalmente recriando-a)"""
    with app.app_context():
        if drop:
            print("Removendo tabelas existentes...")
            db.drop_all()

        db.create_all()

        print("Banco de dados inicializado com sucesso!")
        print("Tabelas criadas:")
        print(f"- {ExperimentResult.__tablename__}")


if __name__ == '__main__':
    init_database(drop='--drop' in sys.argv)

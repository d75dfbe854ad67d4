"""QUBO feature selection over Bitcoin address transaction histories."""

__version__ = "0.1.0"

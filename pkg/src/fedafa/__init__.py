"""Adaptive Federated Averaging: robust aggregation, client-quality tracking and a round simulator."""

__version__ = "0.1.0"

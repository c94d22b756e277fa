"""Spiking policies with hypervector readout for classic-control tasks."""

__version__ = "0.1.0"

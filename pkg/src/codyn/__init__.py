"""Asynchrony-robust collaborative perception on synthetic BEV scenarios."""
__version__ = "0.1.0"

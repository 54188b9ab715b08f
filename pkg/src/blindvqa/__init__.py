"""Simulation of blind, verifiable, loss-tolerant delegation of variational
quantum algorithms built from ancilla-driven J gadgets."""

__version__ = "0.1.0"

"""Simulator for four-state multiparty-to-multiparty quantum secret sharing."""

__version__ = "0.1.0"

"""Distributed adaptive tube MPC for networks of coupled uncertain agents."""

__version__ = "0.1.0"

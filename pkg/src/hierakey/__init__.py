"""Hierarchical mediated authentication and key establishment for IoT
overlays, with a deterministic protocol simulator and scenario harness."""

from . import crypto, engine, errors, hierarchy, protocol, scenario, simnet, wire

__all__ = [
    "crypto",
    "engine",
    "errors",
    "hierarchy",
    "protocol",
    "scenario",
    "simnet",
    "wire",
]

__version__ = "0.1.0"

"""Physics-informed ground reaction force estimation from proprioception."""

__version__ = "0.1.0"

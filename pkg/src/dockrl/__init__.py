"""Six-degree-of-freedom spacecraft docking with PPO."""

__version__ = "0.1.0"

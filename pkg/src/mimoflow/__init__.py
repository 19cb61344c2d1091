"""Power control and flow-level simulation for multi-cell massive MIMO."""

__version__ = "0.1.0"

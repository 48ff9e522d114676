"""Event-based motion segmentation by contrast maximization and per-event variation."""

__version__ = "0.1.0"

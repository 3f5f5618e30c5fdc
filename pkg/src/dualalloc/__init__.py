"""Budget-constrained sequential allocation policies learned from logged data."""

__version__ = "0.1.0"

"""Multi-bubble log-log blow-up laboratory for the mass-critical focusing NLS."""

__version__ = "0.1.0"

"""Multi-resolution elastic net for runner performance from GPS training records."""

__version__ = "0.1.0"

"""Session-based next-item recommenders with side-information fusion."""

__version__ = "0.1.0"

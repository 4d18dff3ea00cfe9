"""pairforge: build and evaluate spot-the-inconsistent-object image pairs."""

__version__ = "0.1.0"

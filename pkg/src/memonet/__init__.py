"""Memory-augmented attention with separated facts and learned halting."""

__version__ = "0.1.0"

"""Growth plate plane detection in micro-CT volumes at desk scale."""

__version__ = "0.1.0"

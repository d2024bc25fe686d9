"""PrivShape - load-shaping privacy simulator for smart-meter households."""

__version__ = "0.1.0"

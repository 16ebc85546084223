"""Score-based decision functions for ERP spellers, with exactly optimised score profiles."""

__version__ = "0.1.0"

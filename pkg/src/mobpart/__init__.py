"""Model-based recursive partitioning for treatment-subgroup identification."""

__version__ = "0.1.0"

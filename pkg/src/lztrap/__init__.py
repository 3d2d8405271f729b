"""Control landscapes of the Landau-Zener two-level system."""

__version__ = "0.1.0"

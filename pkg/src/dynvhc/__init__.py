"""Dynamic virtual holonomic constraints and orbital stabilization."""

__version__ = "0.1.0"

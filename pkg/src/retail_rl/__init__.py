"""Perishable-inventory replenishment simulator and value-based agents."""

__version__ = "0.1.0"

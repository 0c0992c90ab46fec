"""Semiclassical laboratory: relativistic Hartree vs. relativistic Vlasov dynamics."""

__version__ = "0.1.0"

"""Minimum sum power and dirty-paper precoding order search for the MISO downlink."""

__version__ = "0.1.0"

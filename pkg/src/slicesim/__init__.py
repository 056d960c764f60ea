"""Deterministic simulator of a sliced 5G gNB MAC scheduler under Near-RT RIC control."""

__version__ = "0.1.0"

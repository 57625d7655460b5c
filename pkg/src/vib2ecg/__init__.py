"""Reconstruct chest-lead ECG from paired cardiac vibration signals."""

__version__ = "0.1.0"

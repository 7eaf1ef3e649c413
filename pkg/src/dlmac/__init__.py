"""Trace-driven Wi-Fi MAC simulation with a learned joint channel-access and rate policy."""
__version__ = "0.1.0"

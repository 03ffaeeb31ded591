"""Angle-based radio SLAM over mmWave beam sweeps."""

__version__ = "0.1.0"

"""Behavioral simulator of a time-division-multiplexed chopper AFE for ear-EEG."""

__version__ = "0.1.0"

"""Deconfounded recommendation: backdoor-adjusted scoring with a
mixture-of-experts head on an NFM backbone."""

__version__ = "0.1.0"

"""Deterministic two-level cache simulator with fill-decorrelating defenses
and a cache timing attack suite."""

__version__ = "0.1.0"

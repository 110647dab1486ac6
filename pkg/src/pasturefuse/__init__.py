"""Dual-view pasture biomass regression with pluggable cross-view fusion."""

__version__ = "0.1.0"

"""Stress-style background load."""

from .generator import LoadHandle, LoadReport, LoadSpec, start_load, stop_load

__all__ = ["LoadHandle", "LoadReport", "LoadSpec", "start_load", "stop_load"]

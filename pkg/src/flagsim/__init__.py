"""Simulator, calibrator, and open-loop path planner for an untethered
flagellated soft robot swimming near a fluid-air interface."""

__version__ = "0.1.0"

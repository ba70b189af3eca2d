"""Closed-loop simulator and experiment harness for robot-paced interval running."""

__version__ = "0.1.0"

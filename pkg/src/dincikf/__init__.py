"""Distributed invariant CI-Kalman filtering for multi-agent pose estimation on SE_2(3)."""

__version__ = "0.1.0"

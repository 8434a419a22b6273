"""Synthetic endoscopy trajectories, warping-loss analysis and bimodal relative pose estimation."""

__version__ = "0.1.0"

"""Spine-curve synthesis from orthogonal trunk images and 3D Cobb-angle grading."""

__version__ = "0.1.0"

"""Voxel-level visual explanations for volumetric CNN classifiers."""

__version__ = "0.1.0"

"""Promptable 2D segmentation with slice-by-slice 3D propagation for CT volumes."""

__version__ = "0.1.0"

API_VERSION = 1

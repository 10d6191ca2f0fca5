"""Panoramic visual-inertial SLAM on equirectangular images."""

__version__ = "0.1.0"

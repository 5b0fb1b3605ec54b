"""Desk-scale pipeline for surface-following robotic ultrasound scanning.

Covers fiducial-based localisation of a phantom plane, surface
reconstruction from synthetic depth views, and impedance control in
surface coordinates for a simulated 7-DoF arm.
"""

__version__ = "0.1.0"

"""Delay-compensated output-feedback stabilization of a nonautonomous
parabolic equation with finitely many actuators and sensors."""

__version__ = "0.1.0"

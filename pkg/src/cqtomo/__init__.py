"""Compressive quantum tomography with convex informational-completeness
certification."""

from . import channels, convex, harness, inference, qcore, schemes

__all__ = ["qcore", "channels", "inference", "convex", "schemes", "harness"]

__version__ = "0.1.0"

"""Quantum-trajectory simulation of Lindblad and nonlinear Lindblad dynamics
through measured dilation circuits, with exact superoperator references."""

__version__ = "0.1.0"

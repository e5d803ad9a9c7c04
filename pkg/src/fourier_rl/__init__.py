"""Fourier-feature critics for reinforcement learning, in plain numpy."""

__version__ = "0.1.0"

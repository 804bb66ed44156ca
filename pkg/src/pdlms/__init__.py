"""Partial-diffusion LMS over networks with noisy links: simulation and steady-state theory."""

__version__ = "0.1.0"

"""Diffusion-generated coarse-to-fine subgoal chains guiding sampling-based MPC."""

__version__ = "0.1.0"

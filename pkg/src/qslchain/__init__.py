"""Optimal transfer of a single excitation along a spin chain."""

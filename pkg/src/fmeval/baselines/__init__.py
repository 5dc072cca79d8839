"""Numerical baselines: a numpy MLP and Gaussian-process regression."""

"""Extrapolation-regularized balancing weights."""

"""Least-squares importance sampling for Monte Carlo pricing."""

"""Exact statistical parity for contextual bandits via exponential weights."""

"""Shared helpers for the Monte Carlo tests."""

from scipy.stats import norm


def family_z(z: float, count: int) -> float:
    """Per-entry threshold keeping the family-wise false-alarm rate of a
    single ``z``-SE check when ``count`` entries are tested (Bonferroni)."""
    return float(norm.isf(norm.sf(z) / count)) if count > 1 else z

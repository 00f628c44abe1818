"""Shared confidence-band container used by both outcome models."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["CsteCurve"]


@dataclass(eq=False)
class CsteCurve:
    """A treatment-effect curve with its simultaneous confidence band.

    ``grid`` holds index values for the binary model and biomarker values
    for the survival model. ``n_trimmed`` counts grid points dropped because
    the local estimate was undefined there.
    """

    grid: np.ndarray
    estimate: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    alpha: float
    bandwidth: float
    critical_value: float
    se: np.ndarray
    n_trimmed: int = 0

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        self.estimate = np.asarray(self.estimate, dtype=float)
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        self.se = np.asarray(self.se, dtype=float)
        m = self.grid.shape[0]
        if not all(a.shape == (m,) for a in (self.estimate, self.lower, self.upper, self.se)):
            raise ValueError("curve arrays disagree on length")
        if m >= 2 and not np.all(np.diff(self.grid) > 0):
            raise ValueError("grid must be strictly increasing")
        if not (0.0 < self.alpha < 1.0):
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if np.any(self.lower > self.estimate + 1e-12) or np.any(self.upper < self.estimate - 1e-12):
            raise ValueError("band must contain the estimate at every grid point")

    def to_dict(self) -> dict:
        return {
            "grid": self.grid.tolist(),
            "estimate": self.estimate.tolist(),
            "lower": self.lower.tolist(),
            "upper": self.upper.tolist(),
            "alpha": self.alpha,
            "bandwidth": self.bandwidth,
            "critical_value": self.critical_value,
            "se": self.se.tolist(),
            "n_trimmed": self.n_trimmed,
        }

    def to_csv(self) -> str:
        lines = ["u,estimate,lower,upper"]
        for u, e, lo, hi in zip(self.grid, self.estimate, self.lower, self.upper):
            lines.append(f"{float(u)!r},{float(e)!r},{float(lo)!r},{float(hi)!r}")
        return "\n".join(lines) + "\n"

    def __eq__(self, other):
        if not isinstance(other, CsteCurve):
            return NotImplemented
        return (
            np.array_equal(self.grid, other.grid)
            and np.array_equal(self.estimate, other.estimate)
            and np.array_equal(self.lower, other.lower)
            and np.array_equal(self.upper, other.upper)
            and np.array_equal(self.se, other.se)
            and self.alpha == other.alpha
            and self.bandwidth == other.bandwidth
            and self.critical_value == other.critical_value
        )

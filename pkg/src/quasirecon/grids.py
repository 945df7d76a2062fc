"""Grid containers shared by the physics engines, the codec and the metrics.

A marginal is always sampled on 721 uniformly spaced abscissae and a joint
quasi-distribution on a square 256x256 grid (other sizes are allowed for
desk-scale runs).  Values may be negative.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid

MARGINAL_POINTS = 721
JOINT_POINTS = 256
AXIS_LABELS = ("x1", "x13", "u")
SQRT2 = np.sqrt(2.0)


def uniform_axis(lo: float, hi: float, n: int) -> np.ndarray:
    if not hi > lo:
        raise ValueError(f"empty axis window [{lo}, {hi}]")
    return np.linspace(lo, hi, n)


@dataclass(frozen=True)
class Marginal:
    """A sampled 1-D (quasi-)density."""

    axis_label: str
    grid: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if grid.shape != values.shape or grid.ndim != 1:
            raise ValueError("grid and values must be 1-D arrays of equal length")
        grid.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)

    @property
    def step(self) -> float:
        return float(self.grid[1] - self.grid[0])

    def integral(self) -> float:
        return float(trapezoid(self.values, self.grid))

    def peak(self) -> float:
        return float(np.max(np.abs(self.values)))

    def to_record(self) -> dict:
        return {
            "axis_label": self.axis_label,
            "grid": self.grid.astype(np.float64).tolist(),
            "values": self.values.astype(np.float64).tolist(),
        }

    @classmethod
    def from_record(cls, record: dict) -> "Marginal":
        return cls(record["axis_label"], np.asarray(record["grid"]), np.asarray(record["values"]))


@dataclass(frozen=True)
class MarginalTriple:
    """The two axis marginals and the oblique marginal of one joint distribution.

    For CHERs the order is (x1, x13, u); for Wigner functions the same slots
    hold (x, p, u).
    """

    first: Marginal
    second: Marginal
    oblique: Marginal
    meta: dict = field(default_factory=dict)

    def __iter__(self):
        return iter((self.first, self.second, self.oblique))

    def as_array(self) -> np.ndarray:
        """Stack the values into the 3x721 feature layout."""
        return np.stack([m.values for m in self])

    def to_records(self) -> list[dict]:
        return [m.to_record() for m in self]

    @classmethod
    def from_array(cls, values: np.ndarray, grids, labels=AXIS_LABELS, meta=None) -> "MarginalTriple":
        values = np.asarray(values, dtype=float)
        if values.shape[0] != 3:
            raise ValueError(f"expected 3 marginals, got shape {values.shape}")
        ms = [Marginal(lbl, g, v) for lbl, g, v in zip(labels, grids, values)]
        return cls(*ms, meta=dict(meta or {}))


@dataclass(frozen=True)
class JointGrid:
    """Heights of a bivariate quasi-distribution on a rectangular grid.

    ``values[i, j]`` is the height at ``(x[i], y[j])``: the first axis runs
    along x (x1 or position), the second along y (x13 or momentum).
    """

    x: np.ndarray
    y: np.ndarray
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if values.shape != (x.size, y.size):
            raise ValueError(f"values shape {values.shape} does not match axes ({x.size}, {y.size})")
        for a in (x, y, values):
            a.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "values", values)

    @property
    def cell_area(self) -> float:
        return float((self.x[1] - self.x[0]) * (self.y[1] - self.y[0]))

    def integral(self) -> float:
        return float(trapezoid(trapezoid(self.values, self.y, axis=1), self.x))

    @classmethod
    def square(cls, lo: float, hi: float, values: np.ndarray) -> "JointGrid":
        n = np.asarray(values).shape[0]
        axis = uniform_axis(lo, hi, n)
        return cls(axis, axis.copy(), values)

"""Dense 2-D scalar fields on uniform rectangular grids.

Axis 0 of the value array runs along ``x1``, axis 1 along ``x2``.  A
large sentinel stands for ``+inf`` so restricted (partially defined)
functions can ride through the conjugation machinery; any value at or
above the cut threshold is treated as absent.  Centered windows with an
odd node count contain the origin exactly, which the exactness
guarantees downstream rely on.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from .pl1d import Vec2

__all__ = ["GridField2D", "SENTINEL", "SENTINEL_CUT"]

SENTINEL = 1e30
SENTINEL_CUT = 1e29  # values at or above this count as +inf


@dataclass
class GridField2D:
    """Uniformly spaced samples of a scalar function of two variables."""

    origin: Vec2
    spacing: tuple[float, float]
    values: NDArray[np.float64]

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ValueError(f"values must be 2-D, got shape {self.values.shape}")
        if not (self.spacing[0] > 0 and self.spacing[1] > 0):
            raise ValueError(f"spacing must be positive, got {self.spacing}")
        finite = self.values < SENTINEL_CUT
        if not finite.any():
            raise ValueError("field has no finite values")
        bad = ~finite & ~(self.values >= SENTINEL_CUT)
        if bad.any() or not np.all(np.isfinite(self.values[finite])):
            raise ValueError("values must be finite or sentinel")

    @staticmethod
    def centered(radius: float, n: int) -> tuple[Vec2, tuple[float, float]]:
        """Origin and spacing of the window ``[-radius, radius]^2`` with
        ``n`` nodes per side (odd ``n`` puts a node at 0)."""
        if n < 2:
            raise ValueError(f"need at least 2 nodes per side, got {n}")
        d = 2.0 * radius / (n - 1)
        return Vec2(-radius, -radius), (d, d)

    @classmethod
    def from_function(cls, radius: float, n: int, fn) -> "GridField2D":
        """Sample ``fn(X1, X2)`` (array signature) on a centered window."""
        origin, spacing = cls.centered(radius, n)
        x1 = origin.x1 + spacing[0] * np.arange(n)
        x2 = origin.x2 + spacing[1] * np.arange(n)
        X1, X2 = np.meshgrid(x1, x2, indexing="ij")
        return cls(origin=origin, spacing=spacing, values=np.asarray(fn(X1, X2), dtype=float))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @cached_property
    def axis1(self) -> NDArray[np.float64]:
        return self.origin.x1 + self.spacing[0] * np.arange(self.values.shape[0])

    @cached_property
    def axis2(self) -> NDArray[np.float64]:
        return self.origin.x2 + self.spacing[1] * np.arange(self.values.shape[1])

    def meshgrid(self) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        return np.meshgrid(self.axis1, self.axis2, indexing="ij")

    @property
    def finite_mask(self) -> NDArray[np.bool_]:
        return self.values < SENTINEL_CUT

    def node(self, i: int, j: int) -> Vec2:
        return Vec2(self.origin.x1 + i * self.spacing[0], self.origin.x2 + j * self.spacing[1])

    def index_of(self, x: Vec2) -> tuple[int, int]:
        """Nearest node indices; raises if ``x`` is off the window."""
        i = round((x.x1 - self.origin.x1) / self.spacing[0])
        j = round((x.x2 - self.origin.x2) / self.spacing[1])
        n1, n2 = self.values.shape
        if not (0 <= i < n1 and 0 <= j < n2):
            raise ValueError(f"{x} lies outside the grid window")
        return int(i), int(j)

    def value_at(self, x: Vec2) -> float:
        i, j = self.index_of(x)
        return float(self.values[i, j])

    def interp(self, x1, x2) -> NDArray[np.float64]:
        """Bilinear interpolation at points inside the window."""
        f1 = (np.asarray(x1, dtype=float) - self.origin.x1) / self.spacing[0]
        f2 = (np.asarray(x2, dtype=float) - self.origin.x2) / self.spacing[1]
        n1, n2 = self.values.shape
        i = np.clip(np.floor(f1).astype(np.int64), 0, n1 - 2)
        j = np.clip(np.floor(f2).astype(np.int64), 0, n2 - 2)
        a = f1 - i
        b = f2 - j
        v = self.values
        return (
            (1 - a) * (1 - b) * v[i, j]
            + a * (1 - b) * v[i + 1, j]
            + (1 - a) * b * v[i, j + 1]
            + a * b * v[i + 1, j + 1]
        )

    def subwindow(self, radius: float) -> "GridField2D":
        """Centered sub-field covering ``[-radius, radius]^2`` (node-aligned)."""
        i_lo = int(np.searchsorted(self.axis1, -radius - 1e-12))
        i_hi = int(np.searchsorted(self.axis1, radius + 1e-12))
        j_lo = int(np.searchsorted(self.axis2, -radius - 1e-12))
        j_hi = int(np.searchsorted(self.axis2, radius + 1e-12))
        if i_hi <= i_lo or j_hi <= j_lo:
            raise ValueError(f"window radius {radius} selects no nodes")
        return GridField2D(
            origin=Vec2(float(self.axis1[i_lo]), float(self.axis2[j_lo])),
            spacing=self.spacing,
            values=self.values[i_lo:i_hi, j_lo:j_hi].copy(),
        )

    def to_csv(self, path: str | Path, columns: tuple[str, ...] = ("x1", "x2", "value"),
               extra: list[NDArray[np.float64]] | None = None) -> None:
        """Write rows ``x1,x2,value[,extra...]`` in row-major node order."""
        X1, X2 = self.meshgrid()
        cols = [X1.ravel(), X2.ravel(), self.values.ravel()]
        for e in extra or []:
            cols.append(np.asarray(e).ravel())
        if len(cols) != len(columns):
            raise ValueError(f"{len(columns)} column names for {len(cols)} columns")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(columns)
            for row in zip(*cols):
                w.writerow([format(v, ".17g") for v in row])

    def save(self, path: str | Path) -> None:
        np.savez_compressed(
            path,
            origin=np.array([self.origin.x1, self.origin.x2]),
            spacing=np.array(self.spacing),
            values=self.values,
        )

    @staticmethod
    def load(path: str | Path) -> "GridField2D":
        with np.load(path) as data:
            return GridField2D(
                origin=Vec2(*data["origin"].tolist()),
                spacing=(float(data["spacing"][0]), float(data["spacing"][1])),
                values=data["values"].copy(),
            )

"""Time grids, path containers and Cameron-Martin arithmetic on [0, 1].

Everything lives on a uniform partition ``t_i = i / n``. Derivatives of
Cameron-Martin paths are piecewise constant on ``[t_i, t_{i+1})``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Sequence, Union

import numpy as np


class GridMismatchError(ValueError):
    """Raised when two objects live on different time grids."""


@dataclass(frozen=True)
class TimeGrid:
    n_steps: int

    def __post_init__(self) -> None:
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError(f"n_steps must be a positive integer, got {self.n_steps!r}")

    @property
    def dt(self) -> float:
        return 1.0 / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) / self.n_steps

    @property
    def left_times(self) -> np.ndarray:
        """Left endpoints of the grid intervals (where characteristics are sampled)."""
        return np.arange(self.n_steps) / self.n_steps

    def index(self, t: float) -> int:
        """Largest grid index whose time does not exceed ``t``."""
        if not 0.0 <= t <= 1.0 + 1e-12:
            raise ValueError(f"time {t} outside [0, 1]")
        return min(int(np.floor(t * self.n_steps + 1e-9)), self.n_steps)


def make_grid(n_steps: int) -> TimeGrid:
    return TimeGrid(n_steps)


def _check_same_grid(a: TimeGrid, b: TimeGrid) -> None:
    if a.n_steps != b.n_steps:
        raise GridMismatchError(f"grids differ: {a.n_steps} vs {b.n_steps} steps")


@dataclass
class DiscretePath:
    grid: TimeGrid
    values: np.ndarray  # (n_steps + 1, d)

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.shape[0] != self.grid.n_steps + 1:
            raise GridMismatchError(
                f"path has {values.shape[0]} points, grid needs {self.grid.n_steps + 1}"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("path values must be finite")
        self.values = values

    @property
    def d(self) -> int:
        return self.values.shape[1]


@dataclass
class CameronMartinPath:
    """Path ``h = int_0^. hdot`` with ``hdot`` constant on each grid interval."""

    grid: TimeGrid
    hdot: np.ndarray  # (n_steps, d)

    def __post_init__(self) -> None:
        hdot = np.asarray(self.hdot, dtype=float)
        if hdot.ndim == 1:
            hdot = hdot[:, None]
        if hdot.shape[0] != self.grid.n_steps:
            raise GridMismatchError(
                f"hdot has {hdot.shape[0]} intervals, grid has {self.grid.n_steps}"
            )
        self.hdot = hdot

    @property
    def d(self) -> int:
        return self.hdot.shape[1]

    @property
    def h(self) -> DiscretePath:
        return cumulative(self.hdot, self.grid)

    def endpoint_zero(self, tol: float = 1e-12) -> bool:
        return bool(np.max(np.abs(self.h.values[-1])) <= tol)


def cumulative(hdot: np.ndarray, grid: TimeGrid) -> DiscretePath:
    """Integrate a piecewise-constant derivative, starting from ``h_0 = 0``."""
    hdot = np.asarray(hdot, dtype=float)
    if hdot.ndim == 1:
        hdot = hdot[:, None]
    if hdot.shape[0] != grid.n_steps:
        raise GridMismatchError(f"hdot has {hdot.shape[0]} intervals, grid has {grid.n_steps}")
    return DiscretePath(grid, cumulative_array(hdot, grid.dt, axis=0))


def cumulative_array(hdot: np.ndarray, dt: float, axis: int = -2) -> np.ndarray:
    """Array form of :func:`cumulative`: prepend a zero and cumulate ``hdot * dt`` along ``axis``."""
    hdot = np.asarray(hdot, dtype=float)
    axis = axis % hdot.ndim
    shape = list(hdot.shape)
    shape[axis] += 1
    out = np.zeros(shape)
    tail = [slice(None)] * hdot.ndim
    tail[axis] = slice(1, None)
    np.cumsum(hdot * dt, axis=axis, out=out[tuple(tail)])
    return out


def cm_inner(h: CameronMartinPath, k: CameronMartinPath) -> float:
    _check_same_grid(h.grid, k.grid)
    if h.hdot.shape != k.hdot.shape:
        raise GridMismatchError(f"shape mismatch {h.hdot.shape} vs {k.hdot.shape}")
    return float(np.sum(h.hdot * k.hdot) * h.grid.dt)


def cm_norm(h: CameronMartinPath) -> float:
    return float(np.sqrt(cm_inner(h, h)))


def stable_mean(x: np.ndarray, axis: int = 0) -> np.ndarray:
    """Mean along ``axis`` computed around the first sample.

    Identical samples therefore average to themselves bit-for-bit, which the
    projection relies on to annihilate deterministic variations exactly.
    """
    x = np.asarray(x, dtype=float)
    ref = np.take(x, [0], axis=axis)
    return np.squeeze(ref, axis=axis) + np.mean(x - ref, axis=axis)


PathLike = Union[DiscretePath, CameronMartinPath]


def ensemble_mean_path(samples: Sequence[PathLike]) -> PathLike:
    """Bochner (coordinate-wise) mean of a collection of paths on a common grid."""
    if len(samples) == 0:
        raise ValueError("cannot average an empty collection")
    first = samples[0]
    for s in samples[1:]:
        if type(s) is not type(first):
            raise TypeError("cannot mix path types")
        _check_same_grid(first.grid, s.grid)
    if isinstance(first, CameronMartinPath):
        return CameronMartinPath(first.grid, stable_mean(np.stack([s.hdot for s in samples])))
    return DiscretePath(first.grid, stable_mean(np.stack([s.values for s in samples])))


@dataclass
class PathEnsemble:
    """Empirical law: ``m`` sampled paths with their drift and dispersion samples.

    Arrays are path-major: ``paths`` is ``(m, n + 1, d)``, ``drift`` is
    ``(m, n, d)`` and ``dispersion`` is ``(m, n, d, d)``. Each path carries
    weight ``1 / m``.
    """

    grid: TimeGrid
    paths: np.ndarray
    drift: np.ndarray | None
    dispersion: np.ndarray
    seed: int = 0
    provenance: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        m, n1, d = self.paths.shape
        if n1 != self.grid.n_steps + 1:
            raise GridMismatchError("paths do not match the grid")
        if self.drift is not None and self.drift.shape != (m, self.grid.n_steps, d):
            raise GridMismatchError(f"drift shape {self.drift.shape} inconsistent with paths")
        if self.dispersion.shape != (m, self.grid.n_steps, d, d):
            raise GridMismatchError(
                f"dispersion shape {self.dispersion.shape} inconsistent with paths"
            )

    @property
    def m_paths(self) -> int:
        return self.paths.shape[0]

    def require_drift(self) -> np.ndarray:
        """The drift samples, or ``ValueError`` for a paths-only ensemble."""
        if self.drift is None:
            raise ValueError("ensemble carries no drift samples")
        return self.drift

    @property
    def d(self) -> int:
        return self.paths.shape[2]

    def path(self, idx: int) -> DiscretePath:
        return DiscretePath(self.grid, self.paths[idx])

    def replace(self, **changes: Any) -> "PathEnsemble":
        kw = dict(
            grid=self.grid,
            paths=self.paths,
            drift=self.drift,
            dispersion=self.dispersion,
            seed=self.seed,
            provenance=dict(self.provenance),
        )
        kw.update(changes)
        return PathEnsemble(**kw)

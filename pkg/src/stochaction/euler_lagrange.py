"""Split the Euler-Lagrange residual into a deterministic part and a
candidate martingale, and test the latter.

The deterministic part is *defined* as the ensemble mean of the residual.
A genuinely random drift component cannot be detected here directly; it
ends up in the martingale candidate and is caught by the increment test.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .action import ResidualSamples
from .grid import TimeGrid, stable_mean
from .stats import DEFAULT_PAIRS, Estimate, MartingaleTestReport, martingale_test, mc_estimate


@dataclass
class ELDecomposition:
    grid: TimeGrid
    A: np.ndarray  # (n, d)
    N: np.ndarray  # (m, n, d)
    energy_A: float
    energy_N: Estimate
    paths: np.ndarray | None = None


def decompose(residual: ResidualSamples) -> ELDecomposition:
    if residual.m_paths < 2:
        raise ValueError("decomposition needs at least two paths")
    dt = residual.grid.dt
    A = stable_mean(residual.xi_dot, axis=0)
    N = residual.xi_dot - A[None]
    energy_A = float(np.sum(A * A) * dt)
    energy_N = mc_estimate(np.sum(N * N, axis=(1, 2)) * dt)
    return ELDecomposition(residual.grid, A, N, energy_A, energy_N, residual.paths)


@dataclass
class ELVerdict:
    test: MartingaleTestReport
    energy_A: float
    energy_N: float
    energy_finite: bool

    @property
    def satisfied(self) -> bool:
        return self.test.passed and self.energy_finite

    @property
    def verdict(self) -> str:
        return "EL-satisfied" if self.satisfied else "EL-violated"

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "energy_A": self.energy_A,
            "energy_N": self.energy_N,
            "energy_finite": self.energy_finite,
            "martingale_test": self.test.to_dict(),
            "note": "A is the ensemble mean of the residual; its determinism is only checked through N's martingale test",
        }


def el_verdict(
    decomp: ELDecomposition,
    alpha: float = 0.01,
    pairs=DEFAULT_PAIRS,
    min_paths: int = 1000,
) -> ELVerdict:
    """Martingale test of ``N`` on every coordinate (Bonferroni across cells and coordinates)."""
    test = martingale_test(
        decomp.N,
        decomp.grid.left_times,
        pairs=pairs,
        alpha=alpha,
        paths=decomp.paths,
        path_times=None if decomp.paths is None else decomp.grid.times,
        min_paths=min_paths,
    )
    finite = bool(np.isfinite(decomp.energy_A) and np.isfinite(decomp.energy_N.value))
    return ELVerdict(test, decomp.energy_A, decomp.energy_N.value, finite)


def write_A_csv(decomp: ELDecomposition, path) -> None:
    d = decomp.A.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"A{j}" for j in range(d)])
        for t, row in zip(decomp.grid.left_times, decomp.A):
            w.writerow([f"{t:.17g}"] + [f"{x:.17g}" for x in row])

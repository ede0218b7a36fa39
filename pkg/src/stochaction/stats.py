"""Seeded noise, Monte Carlo estimates, the one-sample KS test and the
martingale increment-orthogonality test.

Noise uses one Philox stream per path, keyed by ``(seed, path index)``, so a
block is identical however the work is split across threads and the first
``m`` paths of a larger block coincide with an ``m``-path block.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.stats import norm

DEFAULT_PAIRS: tuple[tuple[float, float], ...] = ((0.25, 0.5), (0.5, 0.75), (0.75, 1.0), (0.25, 1.0))
CLIP_LEVEL = 5.0


@dataclass(frozen=True)
class Estimate:
    """Monte Carlo mean with its standard error."""

    value: float
    se: float

    def __float__(self) -> float:
        return self.value


def mc_estimate(samples: np.ndarray) -> Estimate:
    samples = np.asarray(samples, dtype=float).ravel()
    m = samples.size
    if m == 0:
        raise ValueError("no samples")
    se = float(np.std(samples, ddof=1) / np.sqrt(m)) if m > 1 else float("nan")
    return Estimate(float(np.mean(samples)), se)


@dataclass(frozen=True)
class NoiseBlock:
    seed: int
    shape: tuple[int, int, int]
    dt: float
    increments: np.ndarray  # (m, n, d), each N(0, dt)

    @property
    def brownian(self) -> np.ndarray:
        """Cumulative sums with a leading zero: ``(m, n + 1, d)``."""
        m, n, d = self.shape
        out = np.zeros((m, n + 1, d))
        np.cumsum(self.increments, axis=1, out=out[:, 1:])
        return out


def path_generator(seed: int, path_index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[int(seed), int(path_index)]))


def gaussian_stream(
    seed: int,
    shape: tuple[int, int, int],
    dt: float | None = None,
    threads: int = 1,
) -> NoiseBlock:
    """Reproducible i.i.d. ``N(0, dt)`` increments, ``dt`` defaulting to ``1 / n``."""
    shape = tuple(int(s) for s in shape)
    if len(shape) != 3 or min(shape) <= 0:
        raise ValueError(f"shape must be three positive dimensions, got {shape}")
    if seed < 0:
        raise ValueError("seed must be non-negative")
    m, n, d = shape
    dt = 1.0 / n if dt is None else float(dt)
    out = np.empty(shape)
    scale = np.sqrt(dt)

    def fill(lo: int, hi: int) -> None:
        for p in range(lo, hi):
            out[p] = path_generator(seed, p).standard_normal((n, d))
        out[lo:hi] *= scale

    if threads <= 1 or m < 2 * threads:
        fill(0, m)
    else:
        bounds = np.linspace(0, m, threads + 1).astype(int)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(fill, bounds[:-1], bounds[1:]))
    return NoiseBlock(int(seed), shape, dt, out)


def kolmogorov_sf(x: float, terms: int = 100) -> float:
    """Survival function of the limiting Kolmogorov distribution."""
    if x <= 0:
        return 1.0
    k = np.arange(1, terms + 1)
    if x < 1.0:
        # theta-function form converges fast for small x
        cdf = np.sqrt(2 * np.pi) / x * np.sum(np.exp(-((2 * k - 1) ** 2) * np.pi**2 / (8 * x * x)))
        return float(min(max(1.0 - cdf, 0.0), 1.0))
    sf = 2.0 * np.sum((-1.0) ** (k - 1) * np.exp(-2.0 * k * k * x * x))
    return float(min(max(sf, 0.0), 1.0))


def ks_statistic(samples: np.ndarray, cdf: Callable[[np.ndarray], np.ndarray]) -> float:
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    if np.any(np.isnan(x)):
        raise ValueError("samples contain NaN")
    n = x.size
    f = np.asarray(cdf(x), dtype=float)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - f), np.max(f - (i - 1) / n)))


def ks_test(
    samples: np.ndarray,
    cdf: Callable[[np.ndarray], np.ndarray],
    min_samples: int = 20,
) -> tuple[float, float]:
    """One-sample Kolmogorov-Smirnov statistic and asymptotic p-value."""
    samples = np.asarray(samples, dtype=float).ravel()
    if np.any(np.isnan(samples)):
        raise ValueError("samples contain NaN")
    if samples.size < min_samples:
        raise ValueError(f"need at least {min_samples} samples, got {samples.size}")
    stat = ks_statistic(samples, cdf)
    return stat, kolmogorov_sf(np.sqrt(samples.size) * stat)


@dataclass(frozen=True)
class TestFunctional:
    """Adapted statistic ``phi(W_s, Z_s)`` of the path prefix at time ``s``.

    ``fn`` gets the ensemble paths at ``s`` (``(m, d)`` or ``None``), the
    tested coordinate of the process at ``s`` (``(m,)``) and the coordinate
    index.
    """

    __test__ = False

    name: str
    fn: Callable[[np.ndarray | None, np.ndarray, int], np.ndarray]
    constant: bool = False
    needs_paths: bool = False


def default_functionals(d: int | None) -> list[TestFunctional]:
    """``{1, W_s (each coordinate), Z_s, Z_s^2, clip(W_s Z_s)}``; W terms only when ``d`` is given."""
    fams = [TestFunctional("1", lambda w, z, c: np.ones_like(z), constant=True)]
    if d is not None:
        for j in range(d):
            fams.append(TestFunctional(f"W{j}_s", lambda w, z, c, j=j: w[:, j], needs_paths=True))
    fams.append(TestFunctional("Z_s", lambda w, z, c: z))
    fams.append(TestFunctional("Z_s^2", lambda w, z, c: z * z))
    if d is not None:
        fams.append(
            TestFunctional(
                "clip(W_s*Z_s)",
                lambda w, z, c: np.clip(w[:, c % w.shape[1]] * z, -CLIP_LEVEL, CLIP_LEVEL),
                needs_paths=True,
            )
        )
    return fams


@dataclass
class MartingaleTestReport:
    pairs: list[tuple[float, float]]
    functionals: list[str]
    t_stats: np.ndarray  # (d, n_pairs, n_functionals); NaN for skipped cells
    max_abs_t: float
    threshold: float
    alpha: float
    degenerate: list[tuple[int, tuple[float, float], str]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return bool(self.max_abs_t < self.threshold)

    def cell(self, pair: tuple[float, float], functional: str, coord: int = 0) -> float:
        return float(self.t_stats[coord, self.pairs.index(tuple(pair)), self.functionals.index(functional)])

    def to_dict(self) -> dict:
        return {
            "pairs": [list(p) for p in self.pairs],
            "functionals": list(self.functionals),
            "t_stats": np.where(np.isnan(self.t_stats), None, self.t_stats).tolist(),
            "max_abs_t": self.max_abs_t,
            "threshold": self.threshold,
            "alpha": self.alpha,
            "degenerate": [[c, list(p), f] for c, p, f in self.degenerate],
            "pass": self.passed,
        }


def _snap(times: np.ndarray, t: float) -> int:
    idx = int(np.searchsorted(times, t + 1e-9, side="right") - 1)
    if idx < 0:
        raise ValueError(f"time {t} precedes the first sample time")
    return idx


def martingale_test(
    process: np.ndarray,
    times: np.ndarray,
    test_functionals: Sequence[TestFunctional] | None = None,
    pairs: Sequence[tuple[float, float]] = DEFAULT_PAIRS,
    alpha: float = 0.01,
    paths: np.ndarray | None = None,
    path_times: np.ndarray | None = None,
    min_paths: int = 1000,
) -> MartingaleTestReport:
    """Test ``E[(Z_t - Z_s) phi] = 0`` for each pair and adapted functional.

    ``process`` is ``(m, K)`` or ``(m, K, d)`` sampled at ``times`` (length K).
    Each requested time snaps to the last sample time not after it. Every
    coordinate is tested; the Gaussian threshold is Bonferroni-corrected over
    all non-degenerate cells.
    """
    z = np.asarray(process, dtype=float)
    if z.ndim == 2:
        z = z[:, :, None]
    m, K, d = z.shape
    times = np.asarray(times, dtype=float)
    if times.shape != (K,):
        raise ValueError("times must match the process sample axis")
    if m < min_paths:
        raise ValueError(f"martingale test needs at least {min_paths} paths, got {m}")
    for s, t in pairs:
        if not s < t:
            raise ValueError(f"pair ({s}, {t}) must have s < t")
    if test_functionals is None:
        test_functionals = default_functionals(None if paths is None else paths.shape[2])
    if paths is not None and path_times is None:
        path_times = np.linspace(0.0, 1.0, paths.shape[1])

    names = [f.name for f in test_functionals]
    stats = np.full((d, len(pairs), len(test_functionals)), np.nan)
    degenerate = []
    for c in range(d):
        for p, (s, t) in enumerate(pairs):
            i_s, i_t = _snap(times, s), _snap(times, t)
            zs = z[:, i_s, c]
            incr = z[:, i_t, c] - zs
            w = None if paths is None else paths[:, _snap(path_times, s), :]
            for f_idx, fun in enumerate(test_functionals):
                if fun.needs_paths and w is None:
                    degenerate.append((c, (s, t), fun.name))
                    continue
                phi = np.asarray(fun.fn(w, zs, c), dtype=float)
                if not fun.constant and np.ptp(phi) == 0.0:
                    degenerate.append((c, (s, t), fun.name))
                    continue
                y = incr * phi
                mean = np.mean(y)
                sd = np.std(y, ddof=1)
                if sd > 0:
                    stats[c, p, f_idx] = mean / (sd / np.sqrt(m))
                else:
                    stats[c, p, f_idx] = 0.0 if mean == 0 else np.copysign(np.inf, mean)
    n_cells = max(int(np.sum(~np.isnan(stats))), 1)
    threshold = float(norm.ppf(1.0 - alpha / (2.0 * n_cells)))
    max_abs = float(np.nanmax(np.abs(stats))) if np.any(~np.isnan(stats)) else 0.0
    return MartingaleTestReport(
        pairs=[tuple(map(float, pr)) for pr in pairs],
        functionals=names,
        t_stats=stats,
        max_abs_t=max_abs,
        threshold=threshold,
        alpha=alpha,
        degenerate=degenerate,
    )

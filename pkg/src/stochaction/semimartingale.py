"""Generative semimartingale models and their Euler-Maruyama simulation.

A model's drift and dispersion are *adapted functionals* with signature
``f(grid, i, paths, memo)``. ``paths`` is the full ``(m, n + 1, d)`` array;
only entries with time index ``<= i`` may be read (later entries hold
garbage during simulation and audits). ``memo`` is a dict private to one
pass over the grid, which a functional may use to carry running integrals;
the functional must return the same value when handed an empty memo.

Drift returns ``(m, d)`` (or something broadcastable to it); dispersion
returns ``sigma`` of shape ``(m, d, r)`` or broadcastable, ``r`` being the
noise dimension.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .grid import PathEnsemble, TimeGrid
from .lagrangian import Lagrangian
from .stats import NoiseBlock, gaussian_stream

Functional = Callable[[TimeGrid, int, np.ndarray, dict], np.ndarray]
InitialSampler = Callable[[np.random.Generator, int, int], np.ndarray]

INITIAL_STREAM = 0xD1CE


class SimulationError(RuntimeError):
    """A drift or dispersion evaluation produced non-finite output."""

    def __init__(self, step: int, paths: np.ndarray):
        self.step = int(step)
        self.paths = np.asarray(paths, dtype=int)
        shown = ", ".join(map(str, self.paths[:10])) + (" ..." if self.paths.size > 10 else "")
        super().__init__(f"non-finite characteristic at step {self.step} on paths [{shown}]")


def dirac(x0: float | np.ndarray = 0.0) -> InitialSampler:
    """Constant initial law."""

    def sample(rng: np.random.Generator, m: int, d: int) -> np.ndarray:
        return np.broadcast_to(np.asarray(x0, dtype=float), (m, d)).copy()

    sample.dirac_point = np.asarray(x0, dtype=float)
    return sample


def gaussian_initial(mean: float = 0.0, std: float = 1.0) -> InitialSampler:
    def sample(rng: np.random.Generator, m: int, d: int) -> np.ndarray:
        return mean + std * rng.standard_normal((m, d))

    return sample


def constant_drift(b: float | np.ndarray) -> Functional:
    b = np.asarray(b, dtype=float)

    def drift(grid, i, paths, memo):
        return np.broadcast_to(b, (paths.shape[0], paths.shape[2]))

    return drift


def linear_drift(coef: float = 1.0) -> Functional:
    """``b(t, X) = coef * X_t``."""

    def drift(grid, i, paths, memo):
        return coef * paths[:, i, :]

    return drift


def constant_dispersion(sigma: float | np.ndarray) -> Functional:
    sigma = np.asarray(sigma, dtype=float)

    def disp(grid, i, paths, memo):
        d = paths.shape[2]
        s = sigma * np.eye(d) if sigma.ndim == 0 else sigma
        return s[None, :, :]

    return disp


@dataclass
class SemimartingaleModel:
    d: int
    drift: Functional
    dispersion: Functional
    initial: InitialSampler = field(default_factory=dirac)
    noise_dim: int | None = None
    name: str = "custom"
    params: dict[str, Any] = field(default_factory=dict)

    @property
    def r(self) -> int:
        return self.d if self.noise_dim is None else self.noise_dim

    def describe(self) -> dict[str, Any]:
        return {"name": self.name, "d": self.d, "noise_dim": self.r, **self.params}


def wiener_model(d: int = 1) -> SemimartingaleModel:
    return SemimartingaleModel(d, constant_drift(0.0), constant_dispersion(1.0), name="wiener")


def constant_model(drift: float = 1.0, sigma: float = 1.0, d: int = 1) -> SemimartingaleModel:
    return SemimartingaleModel(
        d,
        constant_drift(drift),
        constant_dispersion(sigma),
        name="constant",
        params={"drift": drift, "sigma": sigma},
    )


def ou_control_model(coef: float = 1.0, d: int = 1) -> SemimartingaleModel:
    """Law of ``dX = dB + coef * X dt``, ``X_0 = 0``."""
    return SemimartingaleModel(
        d, linear_drift(coef), constant_dispersion(1.0), name="ou_control", params={"coef": coef}
    )


def _sigma_shape(sigma: np.ndarray, m: int, d: int, r: int) -> np.ndarray:
    sigma = np.asarray(sigma, dtype=float)
    return np.broadcast_to(sigma, (m, d, r))


def simulate(
    model: SemimartingaleModel,
    grid: TimeGrid,
    m_paths: int,
    seed: int,
    noise: NoiseBlock | None = None,
    threads: int = 1,
    on_error: str = "raise",
) -> PathEnsemble:
    """Euler-Maruyama with left-endpoint characteristics.

    ``X_{i+1} = X_i + sigma_i dB_i + b_i dt``; the ensemble stores
    ``v_i = b_i`` and ``alpha_i = sigma_i sigma_i^T``. Noise comes from
    :func:`gaussian_stream` unless given. With ``on_error="drop"`` paths whose
    characteristics turn non-finite are removed and listed in the provenance;
    the default raises :class:`SimulationError`.
    """
    if m_paths < 1:
        raise ValueError("m_paths must be positive")
    if on_error not in ("raise", "drop"):
        raise ValueError("on_error must be 'raise' or 'drop'")
    n, d, r = grid.n_steps, model.d, model.r
    if noise is None:
        noise = gaussian_stream(seed, (m_paths, n, r), grid.dt, threads=threads)
    elif noise.shape != (m_paths, n, r):
        raise ValueError(f"noise shape {noise.shape} does not match {(m_paths, n, r)}")
    dB = noise.increments

    X = np.zeros((m_paths, n + 1, d))
    X[:, 0, :] = model.initial(np.random.default_rng([int(seed), INITIAL_STREAM]), m_paths, d)
    drift = np.empty((m_paths, n, d))
    disp = np.empty((m_paths, n, d, d))
    failed: dict[int, int] = {}
    memo_b: dict = {}
    memo_s: dict = {}
    for i in range(n):
        b = np.broadcast_to(np.asarray(model.drift(grid, i, X, memo_b), dtype=float), (m_paths, d))
        s = _sigma_shape(model.dispersion(grid, i, X, memo_s), m_paths, d, r)
        bad = ~(np.all(np.isfinite(b), axis=1) & np.all(np.isfinite(s), axis=(1, 2)))
        if np.any(bad):
            idx = np.flatnonzero(bad)
            if on_error == "raise":
                raise SimulationError(i, idx)
            for p in idx:
                failed.setdefault(int(p), i)
            b = np.where(bad[:, None], 0.0, b)
            s = np.where(bad[:, None, None], 0.0, s)
        drift[:, i, :] = b
        disp[:, i, :, :] = np.einsum("mij,mkj->mik", s, s)
        X[:, i + 1, :] = X[:, i, :] + np.einsum("mij,mj->mi", s, dB[:, i, :]) + b * grid.dt
    provenance = {"model": model.describe(), "scheme": "euler-maruyama", "seed": int(seed)}
    if failed:
        keep = np.setdiff1d(np.arange(m_paths), list(failed))
        X, drift, disp = X[keep], drift[keep], disp[keep]
        provenance["failed_paths"] = {str(k): v for k, v in sorted(failed.items())}
    return PathEnsemble(grid, X, drift, disp, seed=int(seed), provenance=provenance)


@dataclass
class AdaptednessReport:
    steps: list[int]
    max_abs_diff: float

    @property
    def passed(self) -> bool:
        return self.max_abs_diff == 0.0


def adaptedness_audit(
    functional: Functional,
    grid: TimeGrid,
    paths: np.ndarray,
    n_checks: int = 8,
    seed: int = 0,
) -> AdaptednessReport:
    """Randomised audit that ``functional`` only reads the prefix.

    A sequential pass (one shared memo) is compared, at random steps, against
    a fresh-memo evaluation on a copy whose entries after the step are
    overwritten with noise.
    """
    rng = np.random.default_rng(seed)
    n = grid.n_steps
    steps = sorted({int(s) for s in rng.integers(0, n, size=n_checks)} | {0, n - 1})
    memo: dict = {}
    reference = {}
    for i in range(n):
        out = np.asarray(functional(grid, i, paths, memo), dtype=float)
        if i in steps:
            reference[i] = out.copy()
    worst = 0.0
    for i in steps:
        garbled = paths.copy()
        garbled[:, i + 1 :, :] = rng.normal(0.0, 10.0, size=garbled[:, i + 1 :, :].shape)
        out = np.asarray(functional(grid, i, garbled, {}), dtype=float)
        diff = np.abs(np.broadcast_to(out, np.broadcast_shapes(out.shape, reference[i].shape)) - reference[i])
        worst = max(worst, float(np.max(diff)) if diff.size else 0.0)
    return AdaptednessReport(steps, worst)


@dataclass
class IntegrabilityReport:
    action: float
    moment_x: float
    moment_v: float
    p1: float
    p2: float
    tail_share_action: float
    tail_share_x: float
    tail_share_v: float

    @property
    def finite(self) -> bool:
        return bool(np.all(np.isfinite([self.action, self.moment_x, self.moment_v])))

    @property
    def heavy_tail_warning(self) -> bool:
        # top 1% of paths carrying over a quarter of a moment
        return max(self.tail_share_action, self.tail_share_x, self.tail_share_v) > 0.25

    def to_dict(self) -> dict[str, Any]:
        return {
            "action": self.action,
            "moment_grad_x": self.moment_x,
            "moment_grad_v": self.moment_v,
            "p1": self.p1,
            "p2": self.p2,
            "tail_share": {
                "action": self.tail_share_action,
                "grad_x": self.tail_share_x,
                "grad_v": self.tail_share_v,
            },
            "finite": self.finite,
            "heavy_tail_warning": self.heavy_tail_warning,
        }


def _tail_share(per_path: np.ndarray, frac: float = 0.01) -> float:
    a = np.abs(per_path)
    total = a.sum()
    if total == 0:
        return 0.0
    k = max(1, int(np.ceil(frac * a.size)))
    return float(np.sort(a)[-k:].sum() / total)


def integrability_diagnostic(
    ensemble: PathEnsemble, L: Lagrangian, p1: float = 2.0, p2: float = 2.0
) -> IntegrabilityReport:
    """Empirical action and gradient moments, with top-1% tail shares as a heavy-tail hint.

    Finite samples always give finite numbers; this is a heuristic, not a
    certificate of integrability.
    """
    if p1 < 2 or p2 < 2:
        raise ValueError("exponents must be at least 2")
    dt = ensemble.grid.dt
    t = ensemble.grid.left_times[None, :]
    x = ensemble.paths[:, :-1, :]
    v, a = ensemble.require_drift(), ensemble.dispersion
    lag = np.sum(L.eval(t, x, v, a), axis=1) * dt
    gx = np.sum(np.linalg.norm(L.grad_x(t, x, v, a), axis=-1) ** p1, axis=1) * dt
    gv = np.sum(np.linalg.norm(L.grad_v(t, x, v, a), axis=-1) ** p2, axis=1) * dt
    return IntegrabilityReport(
        float(np.mean(lag)),
        float(np.mean(gx)),
        float(np.mean(gv)),
        p1,
        p2,
        _tail_share(lag),
        _tail_share(gx),
        _tail_share(gv),
    )


def save_npz(ensemble: PathEnsemble, path) -> None:
    arrays = {"paths": ensemble.paths, "dispersion": ensemble.dispersion}
    if ensemble.drift is not None:
        arrays["drift"] = ensemble.drift
    np.savez_compressed(path, n_steps=ensemble.grid.n_steps, seed=ensemble.seed, **arrays)


def load_npz(path) -> PathEnsemble:
    with np.load(path) as z:
        return PathEnsemble(
            TimeGrid(int(z["n_steps"])),
            z["paths"],
            z["drift"] if "drift" in z.files else None,
            z["dispersion"],
            seed=int(z["seed"]),
        )


def csv_header(d: int) -> list[str]:
    return (
        ["path_id", "step", "t"]
        + [f"x{j}" for j in range(d)]
        + [f"v{j}" for j in range(d)]
        + [f"a{j}{k}" for j in range(d) for k in range(d)]
    )


def write_csv(ensemble: PathEnsemble, path) -> None:
    """One row per (path, grid time); ``v``/``a`` are blank at the final time."""
    d, n = ensemble.d, ensemble.grid.n_steps
    drift = ensemble.require_drift()
    times = ensemble.grid.times
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(csv_header(d))
        for p in range(ensemble.m_paths):
            for i in range(n + 1):
                row = [p, i, f"{times[i]:.17g}"] + [f"{x:.17g}" for x in ensemble.paths[p, i]]
                if i < n:
                    row += [f"{x:.17g}" for x in drift[p, i]]
                    row += [f"{x:.17g}" for x in ensemble.dispersion[p, i].ravel()]
                else:
                    row += [""] * (d + d * d)
                w.writerow(row)


def read_csv(path) -> PathEnsemble:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    d = sum(1 for h in header if h.startswith("x"))
    m = max(int(r[0]) for r in body) + 1
    n = max(int(r[1]) for r in body)
    X = np.zeros((m, n + 1, d))
    v = np.zeros((m, n, d))
    a = np.zeros((m, n, d, d))
    for r in body:
        p, i = int(r[0]), int(r[1])
        vals = r[3:]
        X[p, i] = [float(s) for s in vals[:d]]
        if i < n:
            v[p, i] = [float(s) for s in vals[d : 2 * d]]
            a[p, i] = np.array([float(s) for s in vals[2 * d :]]).reshape(d, d)
    return PathEnsemble(TimeGrid(n), X, v, a)

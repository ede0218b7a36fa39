"""Adapted Cameron-Martin variations, the average-preserving projection and
pushforward perturbations of an ensemble.

Shipped generators have the form ``kdot_t = g(t) * phi(X_s)`` where ``s`` is
a frozen time at or before the support of ``g`` and ``g`` sums to zero on
the grid over its support. Such a variation reads only the prefix, vanishes
at both endpoints on every path, and is bounded because ``phi`` saturates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .grid import GridMismatchError, PathEnsemble, TimeGrid, cumulative_array, stable_mean
from .semimartingale import Functional

CORRECTIONS = ("structural", "mean", "none")


@dataclass
class VariationProcess:
    """``kdot`` is an adapted functional ``(grid, i, paths, memo) -> (m, d)``.

    ``endpoint_correction`` says how ``h_1 = 0`` is obtained: ``"structural"``
    (the generator guarantees it), ``"mean"`` (per-path mean of ``kdot``
    subtracted after evaluation; uses the whole path, so only adapted for
    deterministic ``kdot``) or ``"none"``.
    """

    kdot: Functional
    clip_bound: float = 1.0
    endpoint_correction: str = "none"
    name: str = "custom"
    params: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.endpoint_correction not in CORRECTIONS:
            raise ValueError(f"endpoint_correction must be one of {CORRECTIONS}")
        if not self.clip_bound > 0:
            raise ValueError("clip_bound must be positive")

    def describe(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "clip_bound": self.clip_bound,
            "endpoint_correction": self.endpoint_correction,
            **self.params,
        }


@dataclass
class VariationSamples:
    grid: TimeGrid
    kdot: np.ndarray  # (m, n, d)
    clip_bound: float
    descriptor: dict[str, Any] = field(default_factory=dict)
    rescaled_paths: int = 0

    @property
    def h(self) -> np.ndarray:
        return cumulative_array(self.kdot, self.grid.dt, axis=1)

    @property
    def endpoint_values(self) -> np.ndarray:
        return np.sum(self.kdot, axis=1) * self.grid.dt

    @property
    def bounded_by(self) -> float:
        return float(np.max(np.abs(self.h))) if self.kdot.size else 0.0

    @property
    def mean_kdot(self) -> np.ndarray:
        return stable_mean(self.kdot, axis=0)

    @property
    def mean_norm(self) -> float:
        """``|E[h]|_H`` of the ensemble average."""
        return float(np.sqrt(np.sum(self.mean_kdot**2) * self.grid.dt))


def eval_variation_block(k: VariationProcess, grid: TimeGrid, paths: np.ndarray) -> VariationSamples:
    """:func:`eval_variation` on a block of paths (every step is per-path, so blocks compose)."""
    if isinstance(k.kdot, FrozenKdot):
        kdot = k.kdot.evaluate_all(grid, paths)
    else:
        kdot = _eval_stepwise(k.kdot, grid, paths)
    return _finish(k, grid, kdot)


def eval_variation(k: VariationProcess, ensemble: PathEnsemble) -> VariationSamples:
    """Evaluate ``kdot`` on every path prefix, then correct endpoints and enforce the bound.

    Paths whose ``sup |h|`` still exceeds ``clip_bound`` are rescaled onto it;
    structural generators never trigger this.
    """
    return eval_variation_block(k, ensemble.grid, ensemble.paths)


def _eval_stepwise(fn, grid: TimeGrid, paths: np.ndarray) -> np.ndarray:
    m, d = paths.shape[0], paths.shape[2]
    kdot = np.empty((m, grid.n_steps, d))
    memo: dict = {}
    for i in range(grid.n_steps):
        out = np.broadcast_to(np.asarray(fn(grid, i, paths, memo), dtype=float), (m, d))
        if not np.all(np.isfinite(out)):
            bad = np.flatnonzero(~np.all(np.isfinite(out), axis=1))
            raise ValueError(f"non-finite kdot at step {i} on paths {bad[:10].tolist()}")
        kdot[:, i, :] = out
    return kdot


def _finish(k: VariationProcess, grid: TimeGrid, kdot: np.ndarray) -> VariationSamples:
    if k.endpoint_correction == "structural":
        # bound and endpoints are guaranteed by the generator; check_variation audits them
        return VariationSamples(grid, kdot, k.clip_bound, k.describe(), 0)
    if k.endpoint_correction == "mean":
        kdot -= np.mean(kdot, axis=1, keepdims=True)
    sup = np.max(np.abs(cumulative_array(kdot, grid.dt, axis=1)), axis=(1, 2))
    over = sup > k.clip_bound
    if np.any(over):
        kdot[over] *= (k.clip_bound / sup[over])[:, None, None]
    return VariationSamples(grid, kdot, k.clip_bound, k.describe(), int(np.sum(over)))


def project_average(vs: VariationSamples) -> VariationSamples:
    """``j(h) = h - E[h]``, interval-wise on ``kdot``.

    The sup bound of the image is ``2 * clip_bound``.
    """
    kdot = vs.kdot - stable_mean(vs.kdot, axis=0)[None]
    desc = dict(vs.descriptor, projected=True)
    return VariationSamples(vs.grid, kdot, 2.0 * vs.clip_bound, desc, vs.rescaled_paths)


@dataclass
class VariationCheck:
    endpoints_zero: bool
    bounded: bool
    mean_zero: bool
    max_endpoint: float
    sup_norm: float
    mean_norm: float

    @property
    def passed(self) -> bool:
        return self.endpoints_zero and self.bounded and self.mean_zero


def check_variation(vs: VariationSamples, tol: float = 1e-10) -> VariationCheck:
    max_end = float(np.max(np.abs(vs.endpoint_values))) if vs.kdot.size else 0.0
    sup = vs.bounded_by
    mnorm = vs.mean_norm
    return VariationCheck(max_end <= tol, sup <= vs.clip_bound * (1 + 1e-12), mnorm <= tol, max_end, sup, mnorm)


def perturb(ensemble: PathEnsemble, vs: VariationSamples, eps: float) -> PathEnsemble:
    """Push the ensemble through ``I + eps * h``: paths shift by ``eps h``, drift by ``eps kdot``."""
    if vs.grid.n_steps != ensemble.grid.n_steps:
        raise GridMismatchError("variation and ensemble grids differ")
    drift = ensemble.require_drift()
    if vs.kdot.shape != drift.shape:
        raise GridMismatchError(f"variation shape {vs.kdot.shape} vs drift {drift.shape}")
    if eps == 0:
        return ensemble.replace(paths=ensemble.paths.copy(), drift=ensemble.drift.copy())
    return ensemble.replace(paths=ensemble.paths + eps * vs.h, drift=ensemble.drift + eps * vs.kdot)


# -- structural generators ---------------------------------------------------

PROFILES: dict[str, Callable[..., np.ndarray]] = {
    "sine": lambda u, freq=1, phase=0.0: np.sin(2 * np.pi * freq * u + phase),
    "cosine": lambda u, freq=0.5, phase=0.0: np.cos(2 * np.pi * freq * u + phase),
    "hat": lambda u, peak=0.5: np.maximum(0.0, 1.0 - np.abs(u - peak) / max(peak, 1 - peak)),
    "poly": lambda u, coefs=(0.0, 1.0): np.polyval(list(coefs)[::-1], u),
    "step": lambda u, split=0.5: np.where(u < split, 1.0, -1.0),
}

FEATURES: dict[str, Callable[..., np.ndarray]] = {
    "identity": lambda x: x,
    "linear": lambda x, scale=1.0, shift=0.0: scale * x + shift,
    "tanh": lambda x, scale=1.0, shift=0.0: np.tanh(scale * x + shift),
    "square": lambda x, scale=1.0: scale * x * x,
    "cos": lambda x, scale=1.0, shift=0.0: np.cos(scale * x + shift),
}


class FrozenKdot:
    """``kdot_t = g(t) * sat(phi(X_s))`` on coordinate ``coord``, supported on ``[s, e)``."""

    def __init__(self, profile, freeze_time, end_time, feature, saturation, clip_bound, coord):
        self.profile = profile
        self.freeze_time = freeze_time
        self.end_time = end_time
        self.feature = feature
        self.saturation = saturation
        self.clip_bound = clip_bound
        self.coord = coord
        self._cache: dict[int, tuple] = {}

    def table(self, grid: TimeGrid) -> tuple[np.ndarray, int, float]:
        """Grid profile (zero grid-sum on its support), freeze index and feature cap."""
        n = grid.n_steps
        if n not in self._cache:
            s_idx = grid.index(self.freeze_time)
            e_idx = max(grid.index(self.end_time), s_idx + 1) if self.end_time < 1 else n
            e_idx = min(e_idx, n)
            g = np.zeros(n)
            if e_idx - s_idx >= 2:
                t = grid.left_times[s_idx:e_idx]
                u = (t - grid.times[s_idx]) / (grid.times[e_idx] - grid.times[s_idx])
                seg = np.asarray(self.profile(u), dtype=float)
                g[s_idx:e_idx] = seg - np.mean(seg)
            big_g = np.max(np.abs(np.concatenate([[0.0], np.cumsum(g) * grid.dt])))
            if self.feature is None:
                if big_g > self.clip_bound:
                    g *= self.clip_bound / big_g
                cap = 1.0
            else:
                cap = self.clip_bound / big_g if big_g > 0 else 1.0
            self._cache[n] = (g, s_idx, cap)
        return self._cache[n]

    def _phi(self, paths: np.ndarray, s_idx: int, cap: float) -> np.ndarray:
        raw = np.asarray(self.feature(paths[:, s_idx, self.coord % paths.shape[2]]), dtype=float)
        if self.saturation == "clip":
            return np.clip(raw, -cap, cap)
        return cap * np.tanh(raw / cap)

    def ensemble_mean(self, grid: TimeGrid, paths: np.ndarray) -> np.ndarray:
        """``stable_mean`` of the evaluated ``kdot`` over paths, from ``phi`` alone."""
        g, s_idx, cap = self.table(grid)
        d = paths.shape[2]
        mean_phi = 1.0 if self.feature is None else float(stable_mean(self._phi(paths, s_idx, cap)))
        out = np.zeros((grid.n_steps, d))
        out[:, self.coord % d] = mean_phi * g
        return out

    def evaluate_all(self, grid: TimeGrid, paths: np.ndarray) -> np.ndarray:
        """All steps at once; equal to the stepwise evaluation since ``phi`` reads index ``s`` only."""
        g, s_idx, cap = self.table(grid)
        m, d = paths.shape[0], paths.shape[2]
        out = np.zeros((m, grid.n_steps, d))
        phi = np.ones(m) if self.feature is None else self._phi(paths, s_idx, cap)
        out[:, :, self.coord % d] = phi[:, None] * g[None, :]
        if not np.all(np.isfinite(out)):
            bad = np.flatnonzero(~np.all(np.isfinite(out), axis=(1, 2)))
            raise ValueError(f"non-finite kdot on paths {bad[:10].tolist()}")
        return out

    def __call__(self, grid, i, paths, memo):
        g, s_idx, cap = self.table(grid)
        m, d = paths.shape[0], paths.shape[2]
        out = np.zeros((m, d))
        if g[i] == 0.0:
            return out
        if self.feature is None:
            out[:, self.coord % d] = g[i]
            return out
        if i < s_idx:
            raise AssertionError("support starts before freeze time")
        if "phi" not in memo:
            memo["phi"] = self._phi(paths, s_idx, cap)
        out[:, self.coord % d] = g[i] * memo["phi"]
        return out


def frozen_variation(
    profile: dict[str, Any],
    freeze_time: float = 0.0,
    end_time: float = 1.0,
    feature: dict[str, Any] | None = None,
    saturation: str = "tanh",
    clip_bound: float = 1.0,
    coord: int = 0,
    name: str = "frozen",
) -> VariationProcess:
    """Build a structurally admissible variation from JSON-able pieces.

    ``profile`` and ``feature`` are ``{"type": ..., **kwargs}`` mappings into
    :data:`PROFILES` and :data:`FEATURES`; ``feature=None`` gives a
    deterministic variation.
    """
    if saturation not in ("tanh", "clip"):
        raise ValueError("saturation must be 'tanh' or 'clip'")
    if not 0 <= freeze_time < end_time <= 1:
        raise ValueError("need 0 <= freeze_time < end_time <= 1")
    pkw = {k: v for k, v in profile.items() if k != "type"}
    prof = lambda u: PROFILES[profile["type"]](u, **pkw)  # noqa: E731
    feat = None
    if feature is not None:
        fkw = {k: v for k, v in feature.items() if k != "type"}
        feat = lambda x: FEATURES[feature["type"]](x, **fkw)  # noqa: E731
    kdot = FrozenKdot(prof, freeze_time, end_time, feat, saturation, clip_bound, coord)
    params = {
        "kind": "frozen",
        "profile": dict(profile),
        "freeze_time": freeze_time,
        "end_time": end_time,
        "feature": None if feature is None else dict(feature),
        "saturation": saturation,
        "coord": coord,
        "path_dependent": feature is not None,
    }
    return VariationProcess(kdot, clip_bound, "structural", name, params)


def variation_from_descriptor(desc: dict[str, Any]) -> VariationProcess:
    if desc.get("kind") != "frozen":
        raise ValueError("only frozen-form descriptors can be rebuilt")
    return frozen_variation(
        desc["profile"],
        desc["freeze_time"],
        desc["end_time"],
        desc["feature"],
        desc["saturation"],
        desc["clip_bound"],
        desc["coord"],
        desc["name"],
    )


def cosine_variation(clip_bound: float = 1.0) -> VariationProcess:
    """Deterministic ``kdot_t = cos(pi t)``, grid-corrected to end at zero."""
    return frozen_variation({"type": "cosine", "freq": 0.5}, clip_bound=clip_bound, name="cos_pi_t")


def designed_ou_variation(clip_bound: float = 2.5) -> VariationProcess:
    """``kdot = (1_[1/2,3/4) - 1_[3/4,1)) * clip(W_{1/2})``; the feature cap is ``4 * clip_bound``."""
    return frozen_variation(
        {"type": "step", "split": 0.5},
        freeze_time=0.5,
        feature={"type": "identity"},
        saturation="clip",
        clip_bound=clip_bound,
        name="designed_ou",
    )


def random_variation_bank(seed: int, size: int, clip_bound: float = 1.0, d: int = 1) -> list[VariationProcess]:
    """Reproducible battery: at least half path-dependent, the rest deterministic bumps."""
    if size < 1:
        raise ValueError("bank size must be positive")
    rng = np.random.default_rng(seed)
    n_path = max((size + 1) // 2, min(size, 5))
    kinds = ["path"] * n_path + ["det"] * (size - n_path)
    kinds = [kinds[i] for i in rng.permutation(size)]
    bank = []
    for idx, kind in enumerate(kinds):
        ptype = str(rng.choice(["sine", "hat", "poly", "step", "cosine"]))
        if ptype == "sine":
            profile = {"type": "sine", "freq": int(rng.integers(1, 4)), "phase": round(float(rng.uniform(0, 2 * np.pi)), 6)}
        elif ptype == "cosine":
            profile = {"type": "cosine", "freq": round(float(rng.uniform(0.25, 2.0)), 6)}
        elif ptype == "hat":
            profile = {"type": "hat", "peak": round(float(rng.uniform(0.2, 0.8)), 6)}
        elif ptype == "poly":
            profile = {"type": "poly", "coefs": [round(float(c), 6) for c in rng.normal(size=int(rng.integers(2, 5)))]}
        else:
            profile = {"type": "step", "split": round(float(rng.uniform(0.3, 0.7)), 6)}
        coord = int(rng.integers(0, d))
        if kind == "det":
            bank.append(frozen_variation(profile, clip_bound=clip_bound, coord=coord, name=f"v{idx:02d}"))
            continue
        freeze = int(rng.integers(4, 40)) / 64
        end = 1.0 if rng.random() < 0.7 else min(1.0, freeze + int(rng.integers(16, 40)) / 64)
        ftype = str(rng.choice(["tanh", "linear", "square", "cos"]))
        feature: dict[str, Any] = {"type": ftype, "scale": round(float(rng.uniform(0.5, 2.0)), 6)}
        if ftype in ("tanh", "linear", "cos"):
            feature["shift"] = round(float(rng.normal(0, 0.5)), 6)
        bank.append(
            frozen_variation(
                profile,
                freeze_time=freeze,
                end_time=end,
                feature=feature,
                saturation="tanh",
                clip_bound=clip_bound,
                coord=coord,
                name=f"v{idx:02d}",
            )
        )
    return bank

"""Action functional, Euler-Lagrange residual, Gateaux derivatives and the
criticality battery over average-preserving variations."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .grid import GridMismatchError, PathEnsemble, TimeGrid
from .lagrangian import Lagrangian
from .stats import Estimate, mc_estimate
from .variations import FrozenKdot, VariationProcess, VariationSamples, eval_variation_block


class ActionError(ValueError):
    """The Lagrangian produced a non-finite value on some path and step."""


def _lagrangian_args(ensemble: PathEnsemble):
    t = ensemble.grid.left_times[None, :]
    return t, ensemble.paths[:, :-1, :], ensemble.require_drift(), ensemble.dispersion


def _blocks(m: int, size: int = 4096):
    for lo in range(0, m, size):
        yield lo, min(lo + size, m)


def _first_bad(mask: np.ndarray) -> tuple[int, int]:
    p, i = np.argwhere(mask)[0][:2]
    return int(p), int(i)


def action_samples(ensemble: PathEnsemble, L: Lagrangian) -> np.ndarray:
    """Per-path left Riemann sums ``sum_i L(t_i, X_i, v_i, alpha_i) dt``."""
    t, x, v, a = _lagrangian_args(ensemble)
    out = np.empty(ensemble.m_paths)
    for lo, hi in _blocks(ensemble.m_paths):
        vals = np.asarray(L.eval(t, x[lo:hi], v[lo:hi], a[lo:hi]), dtype=float)
        bad = ~np.isfinite(vals)
        if np.any(bad):
            p, i = _first_bad(bad)
            raise ActionError(f"non-finite Lagrangian value on path {lo + p} at step {i}")
        out[lo:hi] = np.sum(vals, axis=1) * ensemble.grid.dt
    return out


def action(ensemble: PathEnsemble, L: Lagrangian) -> Estimate:
    return mc_estimate(action_samples(ensemble, L))


@dataclass
class ResidualSamples:
    """``xi_dot_i = d_v L_i - sum_{j<i} d_x L_j dt`` per path, ``(m, n, d)``.

    Keeps a reference to the ensemble paths so that martingale tests can use
    functionals of ``W``.
    """

    grid: TimeGrid
    xi_dot: np.ndarray
    paths: np.ndarray | None = None

    @property
    def m_paths(self) -> int:
        return self.xi_dot.shape[0]


def el_residual(ensemble: PathEnsemble, L: Lagrangian) -> ResidualSamples:
    args = _lagrangian_args(ensemble)
    gv = np.asarray(L.grad_v(*args), dtype=float)
    gx = np.asarray(L.grad_x(*args), dtype=float)
    for arr in (gv, gx):
        bad = ~np.all(np.isfinite(arr), axis=-1)
        if np.any(bad):
            p, i = _first_bad(bad)
            raise ActionError(f"non-finite Lagrangian gradient on path {p} at step {i}")
    running = np.zeros_like(gx)
    np.cumsum(gx[:, :-1, :] * ensemble.grid.dt, axis=1, out=running[:, 1:, :])
    return ResidualSamples(ensemble.grid, gv - running, ensemble.paths)


def gateaux_samples(residual: ResidualSamples, vs: VariationSamples) -> np.ndarray:
    if residual.grid.n_steps != vs.grid.n_steps:
        raise GridMismatchError("residual and variation grids differ")
    if residual.xi_dot.shape != vs.kdot.shape:
        raise GridMismatchError(f"residual shape {residual.xi_dot.shape} vs variation {vs.kdot.shape}")
    return np.sum(residual.xi_dot * vs.kdot, axis=(1, 2)) * vs.grid.dt


def gateaux_analytic(residual: ResidualSamples, vs: VariationSamples) -> Estimate:
    """``E[<xi, h>_H]`` estimated as the path mean of ``sum_i <xi_dot_i, kdot_i> dt``."""
    return mc_estimate(gateaux_samples(residual, vs))


def gateaux_fd(ensemble: PathEnsemble, L: Lagrangian, vs: VariationSamples, eps: float) -> float:
    """Central difference of the action along ``vs`` with common random numbers."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    drift = ensemble.require_drift()
    if vs.kdot.shape != drift.shape:
        raise GridMismatchError(f"variation shape {vs.kdot.shape} vs drift {drift.shape}")
    # same arithmetic as action(perturb(...)) without materialising two ensembles
    t, x, v, a = _lagrangian_args(ensemble)
    dt = ensemble.grid.dt
    out = np.empty(ensemble.m_paths)
    for lo, hi in _blocks(ensemble.m_paths):
        kd = vs.kdot[lo:hi]
        h = np.zeros_like(kd)
        np.cumsum(kd[:, :-1, :] * dt, axis=1, out=h[:, 1:, :])
        xs, vv, aa = x[lo:hi], v[lo:hi], a[lo:hi]
        diff = L.eval(t, xs + eps * h, vv + eps * kd, aa) - L.eval(t, xs - eps * h, vv - eps * kd, aa)
        if not np.all(np.isfinite(diff)):
            p, i = _first_bad(~np.isfinite(diff))
            raise ActionError(f"non-finite Lagrangian value on path {lo + p} at step {i}")
        out[lo:hi] = np.sum(diff, axis=1) * dt
    return float(np.mean(out) / (2 * eps))


@dataclass
class CriticalityRow:
    variation_id: str
    dS_analytic: float
    se: float
    dS_fd: float | None
    tolerance: float
    descriptor: dict = field(default_factory=dict)

    @property
    def verdict(self) -> str:
        return "pass" if abs(self.dS_analytic) <= self.tolerance else "fail"


@dataclass
class CriticalityReport:
    rows: list[CriticalityRow]
    tol_abs: float
    n_se: float

    @property
    def critical(self) -> bool:
        return all(r.verdict == "pass" for r in self.rows)

    @property
    def verdict(self) -> str:
        return "critical" if self.critical else "non-critical"

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "tol_abs": self.tol_abs,
            "n_se": self.n_se,
            "rows": [
                {
                    "variation_id": r.variation_id,
                    "dS_analytic": r.dS_analytic,
                    "se": r.se,
                    "dS_fd": r.dS_fd,
                    "tolerance": r.tolerance,
                    "verdict": r.verdict,
                }
                for r in self.rows
            ],
        }

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["variation_id", "dS_analytic", "se", "dS_fd", "verdict"])
            for r in self.rows:
                fd = "" if r.dS_fd is None else f"{r.dS_fd:.17g}"
                w.writerow([r.variation_id, f"{r.dS_analytic:.17g}", f"{r.se:.17g}", fd, r.verdict])


def criticality_test(
    ensemble: PathEnsemble,
    L: Lagrangian,
    bank: Sequence[VariationProcess],
    tol_abs: float = 0.02,
    n_se: float = 3.0,
    fd_eps: float | None = 1e-3,
    residual: ResidualSamples | None = None,
) -> CriticalityReport:
    """Evaluate, project and differentiate along every bank member.

    A member passes when ``|dS| <= max(tol_abs, n_se * SE)``; the law is
    reported critical when all members pass. With ``fd_eps`` set, the CRN
    finite difference is reported alongside.
    """
    if not bank:
        raise ValueError("bank is empty")
    if residual is None:
        residual = el_residual(ensemble, L)
    rows = []
    for k in bank:
        est, fd = _projected_member(ensemble, L, residual, k, fd_eps)
        se = 0.0 if np.isnan(est.se) else est.se
        rows.append(CriticalityRow(k.name, est.value, se, fd, max(tol_abs, n_se * se), k.describe()))
    return CriticalityReport(rows, tol_abs, n_se)


def _projected_member(ensemble, L, residual, k, fd_eps):
    """Gateaux derivative along ``j(k)`` in two blocked passes over the paths.

    Pass one accumulates the ensemble mean of ``kdot`` (centred on the first
    path, as :func:`stable_mean` does); pass two re-evaluates each block,
    subtracts the mean and accumulates the analytic and CRN samples. Keeps
    memory flat at desk scale.
    """
    grid, paths, m = ensemble.grid, ensemble.paths, ensemble.m_paths
    if isinstance(k.kdot, FrozenKdot):
        mean = k.kdot.ensemble_mean(grid, paths)
    else:
        ref = None
        total = None
        for lo, hi in _blocks(m):
            kd = eval_variation_block(k, grid, paths[lo:hi]).kdot
            if ref is None:
                ref = kd[0].copy()
                total = np.zeros_like(ref)
            total += np.sum(kd - ref, axis=0)
        mean = ref + total / m
    dt = grid.dt
    t = grid.left_times[None, :]
    an = np.empty(m)
    fd = np.empty(m) if fd_eps else None
    for lo, hi in _blocks(m):
        kd = eval_variation_block(k, grid, paths[lo:hi]).kdot - mean[None]
        an[lo:hi] = np.sum(residual.xi_dot[lo:hi] * kd, axis=(1, 2)) * dt
        if fd_eps:
            h = np.zeros_like(kd)
            np.cumsum(kd[:, :-1, :] * dt, axis=1, out=h[:, 1:, :])
            x, v, a = paths[lo:hi, :-1, :], ensemble.drift[lo:hi], ensemble.dispersion[lo:hi]
            diff = L.eval(t, x + fd_eps * h, v + fd_eps * kd, a) - L.eval(t, x - fd_eps * h, v - fd_eps * kd, a)
            if not np.all(np.isfinite(diff)):
                p, i = _first_bad(~np.isfinite(diff))
                raise ActionError(f"non-finite Lagrangian value on path {lo + p} at step {i}")
            fd[lo:hi] = np.sum(diff, axis=1) * dt
    return mc_estimate(an), (float(np.mean(fd) / (2 * fd_eps)) if fd_eps else None)


def write_action_csv(path, value: Estimate, extra: dict | None = None) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["quantity", "value", "se"])
        w.writerow(["action", f"{value.value:.17g}", f"{value.se:.17g}"])
        for key, (val, se) in (extra or {}).items():
            w.writerow([key, f"{val:.17g}", "" if se is None else f"{se:.17g}"])

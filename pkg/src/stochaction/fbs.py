"""The explicit one-dimensional critical law, its closed-form solution, and a
checker for the forward-backward system satisfied by critical QEM laws.

The example SDE is ``dX = dB + v_t(X) dt`` with ``X_0 = 0`` and

    v_t(w) = w(t) + e^t - int_0^t e^{s - t} (w(s) + e^s) ds.

Writing ``I_t`` for the integral, ``dI = (X_t + e^t - I_t) dt`` so
``Y_t = v_t(X)`` obeys ``dY = dB + e^t dt``, ``Y_0 = 1``. Hence
``Y_t = B_t + e^t`` and ``X_t = B_t + int_0^t B_s ds + e^t - 1``; ``X_1`` is
Gaussian with mean ``e - 1`` and variance ``1 + 1/3 + 2 * 1/2 = 7/3``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import ndtr

from .grid import PathEnsemble, stable_mean
from .lagrangian import QEMPotential
from .semimartingale import SemimartingaleModel, constant_dispersion, dirac
from .stats import MartingaleTestReport, NoiseBlock, ks_test, martingale_test

TARGET_MEAN = np.e - 1.0
TARGET_VAR = 7.0 / 3.0


class ExampleDrift:
    """``v_i = X_i + e^{t_i} - I_i`` with ``I_{i+1} = e^{-dt} I_i + dt (X_i + e^{t_i})``.

    Exact decay of the kernel, left-endpoint value of the integrand. On the
    exact noiseless solution this residual is about ``dt (1 - e^{-t}) / 2``;
    decaying the new increment as well would be about six times larger.
    ``memo`` carries ``(k, I_k)``; a fresh memo replays the recursion from 0.
    """

    def __call__(self, grid, i, paths, memo):
        dt = grid.dt
        decay = np.exp(-dt)
        k, I = memo.get("I", (0, None))
        if I is None or k > i:
            k, I = 0, np.zeros((paths.shape[0], paths.shape[2]))
        while k < i:
            I = decay * I + dt * (paths[:, k, :] + np.exp(k * dt))
            k += 1
        memo["I"] = (k, I)
        return paths[:, i, :] + np.exp(i * dt) - I


def example_model() -> SemimartingaleModel:
    return SemimartingaleModel(
        d=1,
        drift=ExampleDrift(),
        dispersion=constant_dispersion(1.0),
        initial=dirac(0.0),
        name="example",
    )


def example_oracle(noise: NoiseBlock) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form ``(X, Y)`` on the noise grid, each ``(m, n + 1, 1)``.

    ``int_0^t B_s ds`` is the left Riemann sum of the grid Brownian path.
    """
    m, n, d = noise.shape
    if d != 1:
        raise ValueError("the example is one-dimensional")
    dt = noise.dt
    B = noise.brownian
    t = np.arange(n + 1)[None, :, None] * dt
    integral = np.zeros_like(B)
    np.cumsum(B[:, :-1, :] * dt, axis=1, out=integral[:, 1:, :])
    Y = B + np.exp(t)
    X = B + integral + np.exp(t) - 1.0
    return X, Y


_NORM = np.sqrt(3.0 / (14.0 * np.pi))


def target_density(x):
    x = np.asarray(x, dtype=float)
    return _NORM * np.exp(-3.0 * (x + 1.0 - np.e) ** 2 / 14.0)


def target_cdf(x):
    return ndtr((np.asarray(x, dtype=float) - TARGET_MEAN) / np.sqrt(TARGET_VAR))


@dataclass(frozen=True)
class Marginal:
    """A point mass (``point``) or a continuous law on ``R`` (``cdf``)."""

    point: float | None = None
    cdf: Callable[[np.ndarray], np.ndarray] | None = None
    name: str = ""

    @classmethod
    def dirac(cls, x: float) -> "Marginal":
        return cls(point=float(x), name=f"dirac({x})")

    @classmethod
    def continuous(cls, cdf, name: str = "continuous") -> "Marginal":
        return cls(cdf=cdf, name=name)


def example_marginals() -> tuple[Marginal, Marginal]:
    return Marginal.dirac(0.0), Marginal.continuous(target_cdf, "gaussian(e-1, 7/3)")


@dataclass
class MarginalCheck:
    kind: str
    statistic: float
    p_value: float | None
    passed: bool

    def to_dict(self) -> dict:
        return {"kind": self.kind, "statistic": self.statistic, "p_value": self.p_value, "pass": self.passed}


def check_marginal(samples: np.ndarray, target: Marginal, alpha: float, atol: float = 1e-9) -> MarginalCheck:
    samples = np.asarray(samples, dtype=float)
    if target.point is not None:
        err = float(np.max(np.abs(samples - target.point)))
        return MarginalCheck("dirac", err, None, err <= atol)
    if samples.ndim > 1 and samples.shape[-1] != 1:
        raise ValueError("KS marginal check is one-dimensional")
    stat, p = ks_test(samples.ravel(), target.cdf)
    return MarginalCheck("ks", stat, p, p > alpha)


@dataclass
class FBSReport:
    marginal_0: MarginalCheck
    marginal_1: MarginalCheck
    backward_test: MartingaleTestReport
    qv_realized: float
    qv_expected: float
    qv_tol: float
    moment_Y: float
    moment_gradV: float

    @property
    def qv_error(self) -> float:
        return abs(self.qv_realized - self.qv_expected)

    @property
    def checks(self) -> dict[str, bool]:
        return {
            "marginals": self.marginal_0.passed and self.marginal_1.passed,
            "backward": self.backward_test.passed,
            "forward_qv": self.qv_error <= self.qv_tol * max(1.0, abs(self.qv_expected)),
            "integrability": bool(np.isfinite(self.moment_Y) and np.isfinite(self.moment_gradV)),
        }

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def to_dict(self) -> dict:
        return {
            "marginal_ks_p": self.marginal_1.p_value,
            "marginal_0": self.marginal_0.to_dict(),
            "marginal_1": self.marginal_1.to_dict(),
            "backward_test": self.backward_test.to_dict(),
            "qv_realized": self.qv_realized,
            "qv_expected": self.qv_expected,
            "qv_error": self.qv_error,
            "moments": {"E_int_Y2": self.moment_Y, "E_int_gradV2": self.moment_gradV},
            "checks": self.checks,
            "verdict": "pass" if self.passed else "fail",
        }


def fbs_verify(
    ensemble: PathEnsemble,
    potential: QEMPotential,
    nu0: Marginal,
    nu1: Marginal,
    alpha: float = 0.01,
    qv_tol: float = 0.05,
    min_paths: int = 1000,
) -> FBSReport:
    """Check an ensemble against the forward-backward system of a QEM-critical law.

    ``Y`` is the stored drift. The backward condition tests that
    ``Y - E[Y] - int (grad V(X) - E[grad V(X)])`` is a martingale; the
    forward condition compares the realised quadratic variation of
    ``M = X - X_0 - int Y`` with ``E int tr(alpha)``.
    """
    grid, dt = ensemble.grid, ensemble.grid.dt
    X, Y = ensemble.paths, ensemble.require_drift()

    m0 = check_marginal(X[:, 0, :], nu0, alpha)
    m1 = check_marginal(X[:, -1, :], nu1, alpha)

    gv = np.asarray(potential.grad_V(X[:, :-1, :]), dtype=float)
    centred = gv - stable_mean(gv, axis=0)[None]
    acc = np.zeros_like(centred)
    np.cumsum(centred[:, :-1, :] * dt, axis=1, out=acc[:, 1:, :])
    Z = (Y - stable_mean(Y, axis=0)[None]) - acc
    backward = martingale_test(
        Z, grid.left_times, alpha=alpha, paths=X, path_times=grid.times, min_paths=min_paths
    )

    drift_int = np.zeros_like(X)
    np.cumsum(Y * dt, axis=1, out=drift_int[:, 1:, :])
    M = X - X[:, :1, :] - drift_int
    qv = float(np.mean(np.sum(np.diff(M, axis=1) ** 2, axis=(1, 2))))
    qv_expected = float(np.mean(np.sum(np.trace(ensemble.dispersion, axis1=2, axis2=3), axis=1) * dt))

    moment_Y = float(np.mean(np.sum(Y * Y, axis=(1, 2)) * dt))
    moment_gv = float(np.mean(np.sum(gv * gv, axis=(1, 2)) * dt))
    return FBSReport(m0, m1, backward, qv, qv_expected, qv_tol, moment_Y, moment_gv)

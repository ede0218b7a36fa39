"""Regular Lagrangians ``L_t(x, v, a)`` with analytic gradients in ``x`` and ``v``.

All callables are vectorised: ``x`` and ``v`` have shape ``(..., d)``,
``a`` has shape ``(..., d, d)`` and ``t`` broadcasts against the leading
axes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

ArrayFn = Callable[..., np.ndarray]


@dataclass(frozen=True)
class QEMPotential:
    """Potential ``V`` on ``R^d`` with its gradient."""

    V: Callable[[np.ndarray], np.ndarray]
    grad_V: Callable[[np.ndarray], np.ndarray]
    name: str = "custom"
    params: dict[str, Any] = field(default_factory=dict)


def zero_potential() -> QEMPotential:
    return QEMPotential(
        V=lambda x: np.zeros(np.shape(x)[:-1]),
        grad_V=lambda x: np.zeros(np.shape(x)),
        name="zero",
    )


def quadratic_potential(scale: float = 1.0) -> QEMPotential:
    """``V(x) = scale * |x|^2 / 2``."""
    return QEMPotential(
        V=lambda x: 0.5 * scale * np.sum(np.square(x), axis=-1),
        grad_V=lambda x: scale * np.asarray(x, dtype=float),
        name="quadratic",
        params={"scale": scale},
    )


def linear_potential(c: np.ndarray) -> QEMPotential:
    """``V(x) = <c, x>``."""
    c = np.asarray(c, dtype=float)
    return QEMPotential(
        V=lambda x: np.asarray(x, dtype=float) @ c,
        grad_V=lambda x: np.broadcast_to(c, np.shape(x)).copy(),
        name="linear",
        params={"c": c.tolist()},
    )


def cosine_potential(amplitude: float = 1.0, frequency: float = 1.0) -> QEMPotential:
    """``V(x) = amplitude * sum_j cos(frequency * x_j)``, a smooth non-quadratic choice."""
    return QEMPotential(
        V=lambda x: amplitude * np.sum(np.cos(frequency * np.asarray(x, dtype=float)), axis=-1),
        grad_V=lambda x: -amplitude * frequency * np.sin(frequency * np.asarray(x, dtype=float)),
        name="cosine",
        params={"amplitude": amplitude, "frequency": frequency},
    )


def potential_from_spec(spec: dict[str, Any] | None) -> QEMPotential:
    """Build a potential from a config mapping such as ``{"kind": "quadratic", "scale": 2}``."""
    spec = dict(spec or {})
    kind = spec.pop("kind", "zero")
    if kind == "zero":
        return zero_potential()
    if kind == "quadratic":
        return quadratic_potential(**spec)
    if kind == "linear":
        return linear_potential(**spec)
    if kind == "cosine":
        return cosine_potential(**spec)
    raise ValueError(f"unknown potential kind {kind!r}")


@dataclass(frozen=True)
class Lagrangian:
    eval: ArrayFn
    grad_x: ArrayFn
    grad_v: ArrayFn
    name: str = "custom"
    params: dict[str, Any] = field(default_factory=dict)

    def describe(self) -> dict[str, Any]:
        return {"name": self.name, **self.params}


def make_qem(potential: QEMPotential) -> Lagrangian:
    """Kinetic-plus-potential Lagrangian ``|v|^2 / 2 + V(x)``; ignores ``t`` and ``a``."""

    def value(t, x, v, a=None):
        v = np.asarray(v, dtype=float)
        return 0.5 * np.sum(v * v, axis=-1) + potential.V(np.asarray(x, dtype=float))

    def gx(t, x, v, a=None):
        return np.asarray(potential.grad_V(np.asarray(x, dtype=float)), dtype=float)

    def gv(t, x, v, a=None):
        return np.array(v, dtype=float)

    return Lagrangian(value, gx, gv, name="qem", params={"potential": potential.name, **potential.params})


def directional_derivative(L: Lagrangian, t, x, v, a, dx, dv) -> np.ndarray:
    """``<d_x L, dx> + <d_v L, dv>`` at ``(t, x, v, a)``."""
    return np.sum(L.grad_x(t, x, v, a) * np.asarray(dx), axis=-1) + np.sum(
        L.grad_v(t, x, v, a) * np.asarray(dv), axis=-1
    )


@dataclass
class GradientCheckReport:
    max_rel_error_x: float
    max_rel_error_v: float
    tolerance: float
    n_points: int
    skipped: list[int] = field(default_factory=list)

    @property
    def max_rel_error(self) -> float:
        return max(self.max_rel_error_x, self.max_rel_error_v)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def _rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1.0)
    return float(np.max(np.abs(analytic - numeric)) / scale)


def gradient_check(
    L: Lagrangian,
    sample_points: list[tuple[float, np.ndarray, np.ndarray, np.ndarray]],
    eps: float = 1e-5,
    tolerance: float = 1e-6,
) -> GradientCheckReport:
    """Compare analytic gradients against central differences of ``L.eval``.

    Errors are measured relative to ``max(|grad|, 1)`` so that vanishing
    gradients are compared in absolute terms. Points where ``eval`` is not
    finite are skipped and reported.
    """
    if not sample_points:
        raise ValueError("no sample points")
    err_x = err_v = 0.0
    skipped = []
    for idx, (t, x, v, a) in enumerate(sample_points):
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        if not np.isfinite(L.eval(t, x, v, a)):
            skipped.append(idx)
            continue
        d = x.shape[-1]
        num_x = np.empty(d)
        num_v = np.empty(d)
        for j in range(d):
            e = np.zeros(d)
            e[j] = eps
            num_x[j] = (L.eval(t, x + e, v, a) - L.eval(t, x - e, v, a)) / (2 * eps)
            num_v[j] = (L.eval(t, x, v + e, a) - L.eval(t, x, v - e, a)) / (2 * eps)
        err_x = max(err_x, _rel_err(np.asarray(L.grad_x(t, x, v, a)), num_x))
        err_v = max(err_v, _rel_err(np.asarray(L.grad_v(t, x, v, a)), num_v))
    return GradientCheckReport(err_x, err_v, tolerance, len(sample_points), skipped)

"""Run configuration and the end-to-end pipeline behind the CLI."""

from __future__ import annotations

import csv
import json
import os
import platform
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np
import scipy

from . import __version__
from .action import action, criticality_test, el_residual, gateaux_analytic, gateaux_fd, write_action_csv
from .euler_lagrange import decompose, el_verdict, write_A_csv
from .fbs import Marginal, example_model, example_oracle, fbs_verify, target_cdf
from .grid import make_grid
from .lagrangian import make_qem, potential_from_spec
from .semimartingale import (
    SemimartingaleModel,
    constant_dispersion,
    constant_drift,
    constant_model,
    integrability_diagnostic,
    linear_drift,
    ou_control_model,
    simulate,
    wiener_model,
)
from .stats import gaussian_stream, ks_test
from .variations import (
    cosine_variation,
    designed_ou_variation,
    eval_variation,
    project_average,
    random_variation_bank,
)

EXPERIMENTS = ("example", "wiener", "ou_control", "custom")
STAGES = ("action", "el", "criticality", "fbs")
OUT_ENV = "STOCHACTION_OUT"


class ConfigError(ValueError):
    pass


@dataclass
class BankConfig:
    size: int = 20
    clip_bound: float = 1.0
    seed: int = 11


@dataclass
class RunConfig:
    experiment: str = "example"
    n_steps: int = 512
    m_paths: int = 50000
    seed: int = 7
    alpha: float = 0.01
    tol_abs: float = 0.02
    eps_list: list[float] = field(default_factory=lambda: [1e-3, 1e-2])
    output_dir: str = "out"
    threads: int = 1
    exact_repro: bool = False
    expect: str | None = None
    potential: dict[str, Any] = field(default_factory=lambda: {"kind": "zero"})
    bank: BankConfig = field(default_factory=BankConfig)
    model: dict[str, Any] = field(default_factory=dict)

    def validate(self) -> None:
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; choose from {', '.join(EXPERIMENTS)}")
        bad = [
            name
            for name, val in [
                ("n_steps", self.n_steps),
                ("m_paths", self.m_paths),
                ("alpha", self.alpha),
                ("tol_abs", self.tol_abs),
                ("threads", self.threads),
                ("bank.size", self.bank.size),
                ("bank.clip_bound", self.bank.clip_bound),
            ]
            if not val > 0
        ]
        if self.seed < 0 or self.bank.seed < 0:
            bad.append("seed")
        if not self.eps_list or any(not e > 0 for e in self.eps_list):
            bad.append("eps_list")
        if self.expect not in (None, "critical", "non-critical"):
            bad.append("expect")
        if bad:
            raise ConfigError(f"invalid values for: {', '.join(bad)}")

    @property
    def expected(self) -> str:
        if self.expect is not None:
            return self.expect
        return "non-critical" if self.experiment == "ou_control" else "critical"

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def config_from_mapping(data: dict[str, Any]) -> RunConfig:
    """Build a config, rejecting unknown keys (all of them reported at once)."""
    data = dict(data)
    known = {f.name for f in fields(RunConfig)}
    offending = sorted(k for k in data if k not in known)
    bank = data.pop("bank", {}) or {}
    if isinstance(bank, dict):
        bank_known = {f.name for f in fields(BankConfig)}
        offending += sorted(f"bank.{k}" for k in bank if k not in bank_known)
    if offending:
        raise ConfigError(f"unknown config keys: {', '.join(offending)}")
    cfg = RunConfig(**data, bank=BankConfig(**bank))
    cfg.validate()
    return cfg


def load_config(path: str | os.PathLike) -> RunConfig:
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".json":
        data = json.loads(text)
    else:
        try:
            import tomllib
        except ModuleNotFoundError:  # Python < 3.11
            import tomli as tomllib
        data = tomllib.loads(text)
    return config_from_mapping(data)


def build_model(cfg: RunConfig) -> SemimartingaleModel:
    if cfg.experiment == "example":
        return example_model()
    if cfg.experiment == "wiener":
        return wiener_model(1)
    if cfg.experiment == "ou_control":
        return ou_control_model(1.0)
    spec = dict(cfg.model)
    d = int(spec.get("d", 1))
    kind = spec.get("drift", "constant")
    if kind == "constant":
        drift = constant_drift(float(spec.get("drift_value", 0.0)))
    elif kind == "linear":
        drift = linear_drift(float(spec.get("coef", 1.0)))
    else:
        raise ConfigError(f"unknown custom drift {kind!r}")
    return SemimartingaleModel(
        d, drift, constant_dispersion(float(spec.get("sigma", 1.0))), name="custom", params=spec
    )


def marginals_for(cfg: RunConfig) -> tuple[Marginal, Marginal] | None:
    from scipy.special import ndtr

    if cfg.experiment == "example":
        return Marginal.dirac(0.0), Marginal.continuous(target_cdf, "gaussian(e-1, 7/3)")
    if cfg.experiment == "wiener":
        return Marginal.dirac(0.0), Marginal.continuous(ndtr, "gaussian(0, 1)")
    if cfg.experiment == "ou_control":
        sd = np.sqrt((np.e**2 - 1) / 2)
        return Marginal.dirac(0.0), Marginal.continuous(lambda x: ndtr(x / sd), "gaussian(0, (e^2-1)/2)")
    return None


def _check(name: str, expected: Any, observed: Any, ok: bool | None = None) -> dict[str, Any]:
    return {"name": name, "expected": expected, "observed": observed, "pass": bool(expected == observed if ok is None else ok)}


def _f(x) -> float | None:
    return None if x is None else float(x)


def run(cfg: RunConfig, stages: tuple[str, ...] = STAGES) -> dict[str, Any]:
    """Execute the pipeline, write artefacts to ``cfg.output_dir`` and return the manifest."""
    cfg.validate()
    start = time.perf_counter()
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    threads = 1 if cfg.exact_repro else cfg.threads

    grid = make_grid(cfg.n_steps)
    model = build_model(cfg)
    ensemble = simulate(model, grid, cfg.m_paths, cfg.seed, threads=threads)
    L = make_qem(potential_from_spec(cfg.potential))
    zero_v = cfg.potential.get("kind", "zero") == "zero"
    results: dict[str, Any] = {"ensemble": {"m_paths": ensemble.m_paths, "n_steps": grid.n_steps, "model": model.describe()}}
    checks: list[dict[str, Any]] = []
    expected = cfg.expected
    crit_expected = expected == "critical"

    x1 = ensemble.paths[:, -1, :]
    with open(out / "x1_samples.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path_id"] + [f"x{j}" for j in range(ensemble.d)])
        for p, row in enumerate(x1):
            w.writerow([p] + [f"{x:.17g}" for x in row])

    residual = el_residual(ensemble, L) if {"el", "criticality"} & set(stages) else None

    if "action" in stages:
        est = action(ensemble, L)
        diag = integrability_diagnostic(ensemble, L, 2.0, 2.0)
        results["action"] = {"value": est.value, "se": est.se, "integrability": diag.to_dict()}
        write_action_csv(
            out / "action.csv",
            est,
            {"moment_grad_x_p2": (diag.moment_x, None), "moment_grad_v_p2": (diag.moment_v, None)},
        )
        if cfg.experiment == "example" and zero_v:
            target = float(np.e**2 / 4)
            tol = max(0.02, 4 * est.se)
            checks.append(_check("action_vs_e2_over_4", f"|S - {target:.6f}| < {tol:.4f}", est.value, abs(est.value - target) < tol))
        if cfg.experiment == "wiener" and zero_v:
            checks.append(_check("action_zero", 0.0, est.value))

    if "el" in stages:
        dec = decompose(residual)
        verdict = el_verdict(dec, cfg.alpha)
        write_A_csv(dec, out / "A_process.csv")
        results["el"] = verdict.to_dict()
        if cfg.experiment == "example" and zero_v:
            err = float(np.max(np.abs(dec.A[:, 0] - np.exp(grid.left_times))))
            results["el"]["sup_A_minus_exp"] = err
        checks.append(_check("el_verdict", "EL-satisfied" if crit_expected else "EL-violated", verdict.verdict))

    if "criticality" in stages:
        bank = random_variation_bank(cfg.bank.seed, cfg.bank.size, cfg.bank.clip_bound, d=ensemble.d)
        if cfg.experiment == "ou_control":
            bank.append(designed_ou_variation())
        report = criticality_test(ensemble, L, bank, tol_abs=cfg.tol_abs, fd_eps=cfg.eps_list[0], residual=residual)
        report.write_csv(out / "criticality.csv")
        results["criticality"] = report.to_dict()
        results["criticality"]["bank"] = [k.describe() for k in bank]
        checks.append(_check("criticality", expected, report.verdict))

        fd_rows = []
        for k in bank[:3]:
            vs = project_average(eval_variation(k, ensemble))
            ga = gateaux_analytic(residual, vs).value
            for eps in cfg.eps_list:
                fd = gateaux_fd(ensemble, L, vs, eps)
                fd_rows.append({"variation_id": k.name, "eps": eps, "analytic": ga, "fd": fd})
        results["fd_check"] = fd_rows

        if cfg.experiment == "example" and zero_v:
            vs = eval_variation(cosine_variation(), ensemble)
            raw = gateaux_analytic(residual, vs)
            proj = gateaux_analytic(residual, project_average(vs))
            target = -(np.e + 1) / (1 + np.pi**2)
            results["cos_variation"] = {"raw": raw.value, "raw_se": raw.se, "projected": proj.value, "projected_se": _f(proj.se), "target_raw": target}
            checks.append(_check("cos_variation_raw", f"{target:.6f} +- 0.01", raw.value, abs(raw.value - target) < 0.01))

    if "fbs" in stages and cfg.experiment != "custom":
        nu0, nu1 = marginals_for(cfg)
        fbs = fbs_verify(ensemble, potential_from_spec(cfg.potential), nu0, nu1, cfg.alpha)
        results["fbs"] = fbs.to_dict()
        checks.append(_check("fbs_verify", "pass" if crit_expected else "fail", results["fbs"]["verdict"]))
        if cfg.experiment == "example":
            stat, p = ks_test(x1[:, 0], target_cdf)
            results["marginal"] = {"mean_x1": float(np.mean(x1)), "var_x1": float(np.var(x1, ddof=1)), "ks_stat": stat, "ks_p": p}
            checks.append(_check("ks_x1", f"p > {cfg.alpha}", p, p > cfg.alpha))
            noise = gaussian_stream(cfg.seed, (cfg.m_paths, grid.n_steps, 1), grid.dt, threads=threads)
            X_or, _ = example_oracle(noise)
            results["oracle"] = {"mean_sup_error": float(np.mean(np.max(np.abs(ensemble.paths - X_or), axis=(1, 2))))}

    manifest = {
        "config": cfg.to_dict(),
        "versions": {
            "stochaction": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
        "stages": list(stages),
        "results": results,
        "checks": checks,
        "passed": all(c["pass"] for c in checks),
        "wall_time_s": time.perf_counter() - start,
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, default=_json_default)
    return manifest


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(f"not serialisable: {type(o)}")

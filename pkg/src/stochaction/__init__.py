"""Monte Carlo toolkit for action functionals on laws of continuous
semimartingales: simulation, Gateaux derivatives along average-preserving
variations, and Euler-Lagrange / forward-backward criticality checks."""

__version__ = "0.1.0"

from .action import action, criticality_test, el_residual, gateaux_analytic, gateaux_fd
from .euler_lagrange import decompose, el_verdict
from .fbs import example_model, example_oracle, fbs_verify, target_cdf, target_density
from .grid import PathEnsemble, TimeGrid, cm_inner, cm_norm, cumulative, ensemble_mean_path, make_grid
from .lagrangian import QEMPotential, directional_derivative, gradient_check, make_qem
from .semimartingale import SemimartingaleModel, integrability_diagnostic, simulate
from .stats import gaussian_stream, ks_test, martingale_test
from .variations import (
    VariationProcess,
    check_variation,
    eval_variation,
    perturb,
    project_average,
    random_variation_bank,
)

__all__ = [
    "PathEnsemble",
    "QEMPotential",
    "SemimartingaleModel",
    "TimeGrid",
    "VariationProcess",
    "action",
    "check_variation",
    "cm_inner",
    "cm_norm",
    "criticality_test",
    "cumulative",
    "decompose",
    "directional_derivative",
    "el_residual",
    "el_verdict",
    "ensemble_mean_path",
    "eval_variation",
    "example_model",
    "example_oracle",
    "fbs_verify",
    "gateaux_analytic",
    "gateaux_fd",
    "gaussian_stream",
    "gradient_check",
    "integrability_diagnostic",
    "ks_test",
    "make_grid",
    "make_qem",
    "martingale_test",
    "perturb",
    "project_average",
    "random_variation_bank",
    "simulate",
    "target_cdf",
    "target_density",
]

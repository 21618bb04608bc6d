"""Particle discretisation of mean-field optimal control with turnpike diagnostics."""

from .dynamics import Trajectory, direct_gradient_descent, solve_pmp
from .lift import LiftedOperator, RandomVector, lifted_gradient, lifted_hessian
from .measure import EmpiricalMeasure, wasserstein2
from .model import LQMeanField, NonlinearAttraction, ScalarLQ, build_problem
from .spectral import certify, check_et_hypotheses, solve_riccati
from .static_kkt import StationaryTriple, solve_stationary
from .turnpike import fit_envelope, turnpike_report

__all__ = [
    "EmpiricalMeasure", "LQMeanField", "LiftedOperator", "NonlinearAttraction", "RandomVector",
    "ScalarLQ", "StationaryTriple", "Trajectory", "build_problem", "certify", "check_et_hypotheses",
    "direct_gradient_descent", "fit_envelope", "lifted_gradient", "lifted_hessian", "solve_pmp",
    "solve_riccati", "solve_stationary", "turnpike_report", "wasserstein2",
]

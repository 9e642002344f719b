"""Adaptive social learning: simulation and performance analysis."""

__version__ = "0.1.0"

from .analysis import (compute_C_ave, compute_m_ave, error_exponent, lambda_ave,
                       phi_integral, rate_function, refined_moments, solve_t_star,
                       steady_state_descriptors)
from .engine import BeliefState, Strategy, StrategyKind, run_trajectory
from .graph import (Adjacency, analyze_network, build_averaging_matrix,
                    build_laplacian_matrix, load_edge_list)
from .models import GaussianFamily, LaplaceFamily, load_model_assignment

__all__ = [
    "Adjacency", "BeliefState", "GaussianFamily", "LaplaceFamily", "Strategy",
    "StrategyKind", "analyze_network", "build_averaging_matrix",
    "build_laplacian_matrix", "compute_C_ave", "compute_m_ave", "error_exponent",
    "lambda_ave", "load_edge_list", "load_model_assignment", "phi_integral",
    "rate_function", "refined_moments", "run_trajectory", "solve_t_star",
    "steady_state_descriptors",
]

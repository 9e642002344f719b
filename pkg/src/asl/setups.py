"""Bundled network and model definitions used by the experiments.

``ten_agent``
    Ten-agent undirected graph with self-loops.  The topology is a
    reconstruction whose averaging-rule Perron vector reproduces the
    reference error exponents.
``reference``
    Reference hypothesis-to-likelihood assignment with Laplace locations
    ``spacing * n`` (0.1 in the stationary study, 1.0 in the nonstationary
    one).
``reduced5``
    Five-agent ring built from the reference rows of agents 1, 2, 4, 7 and 8,
    used where the ten-agent Monte Carlo study is too slow.
"""

from importlib import resources

import numpy as np

from .graph import build_averaging_matrix, build_laplacian_matrix, parse_edge_list
from .models import LaplaceFamily, parse_model_assignment

DATA = resources.files(__package__) / "data"


def data_text(name):
    return (DATA / name).read_text()


def ten_agent_adjacency():
    return parse_edge_list(data_text("ten_agent.edges"))


def reference_model(spacing=0.1):
    """Reference assignment with locations ``spacing * n``."""
    base = parse_model_assignment(data_text("reference_unit.models"))
    return LaplaceFamily(np.round(base.params * spacing, 12))


def reduced5():
    """``(adjacency, model)`` of the five-agent variant."""
    return (parse_edge_list(data_text("reduced5.edges")),
            parse_model_assignment(data_text("reduced5.models")))


def reference_setup(spacing=0.1, policy="averaging"):
    """Adjacency, combination matrix and model of the ten-agent study."""
    adj = ten_agent_adjacency()
    build = build_averaging_matrix if policy == "averaging" else build_laplacian_matrix
    return adj, build(adj), reference_model(spacing)

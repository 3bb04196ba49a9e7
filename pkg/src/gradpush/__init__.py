"""Gradient-push over strongly connected digraphs, with executable convergence checks."""

from .costs import CostEnsemble, least_squares_ensemble, quadratic_ensemble
from .digraph import DiGraph, complete_digraph, random_digraph, ring_digraph
from .engine import GPState, RunRecord, run
from .mixing import MixingMatrix, build_mixing
from .theory import TheoryConstants, compute_constants, stepsize_gate

__all__ = [
    "CostEnsemble", "DiGraph", "GPState", "MixingMatrix", "RunRecord", "TheoryConstants",
    "build_mixing", "complete_digraph", "compute_constants", "least_squares_ensemble",
    "quadratic_ensemble", "random_digraph", "ring_digraph", "run", "stepsize_gate",
]
__version__ = "0.1.0"

"""
causal-vote - causal graph recovery by voting over knowledge bases.

Each knowledge base (a language model's background knowledge, retrieved
literature, or a conditional-independence test on data) judges whether two
variables are directly associated; edges survive on a positive vote score
and are then oriented by majority.
"""

__version__ = "0.1.0"

from .config import Config
from .graph import CausalGraph, Skeleton
from .ground_truth import load_ground_truth
from .recover import RecoveryReport, run_pipeline
from .evaluate import report

__all__ = ["Config", "CausalGraph", "Skeleton", "load_ground_truth", "RecoveryReport", "run_pipeline", "report"]

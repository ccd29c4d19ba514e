"""Reinforcement-learning architecture search over quantized CNNs."""

from .controller import Controller
from .search import SearchConfig, check_termination, compute_reward, random_search, run_search
from .space import SearchSpace

__all__ = ["Controller", "SearchConfig", "SearchSpace", "check_termination", "compute_reward",
           "random_search", "run_search"]

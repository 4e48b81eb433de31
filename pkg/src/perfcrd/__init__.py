"""Performative prediction on a networked collective risk dilemma."""

from .game import GameParams
from .graph import PopulationGraph, build_graph
from .predictors import PredictorModel
from .rollout import RolloutConfig, metrics, run_hard, run_soft
from .training import TrainConfig, train

__version__ = "0.1.0"

__all__ = ["GameParams", "PopulationGraph", "PredictorModel", "RolloutConfig", "TrainConfig", "build_graph",
           "metrics", "run_hard", "run_soft", "train"]

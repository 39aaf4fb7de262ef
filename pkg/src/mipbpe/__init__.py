"""Budgeted performance estimation for NAS via Minimum Importance Pruning."""

from .cellspace import Genotype, decode, edge_count, encode, mutate, random_genotype, space_size
from .evaluators import ArchSet, EvalResult, ExternalEvaluator, SurrogateEvaluator, SurrogateModel
from .forest import ForestParams, RandomForest
from .hyperspace import BpeConfig, Dimension, HyperSpace, PinMask, default_preset, sample_config
from .mip import MipParams, run
from .ranking import ObjectiveParams, objective, ranks, spearman

__version__ = "0.1.0"

"""Adaptive sampling of driving-scenario parameter spaces by repulsive sphere packing."""
from .baselines import BaselineKind, greedy_sample, qmc_sample, smc_sample
from .coverage import ProbeSet, crate_estimate, halton, is_in_known
from .lifecycle import KnowledgeBase, OuterConfig, RunReport, generate_round, kde_density, run, score
from .packing import PackingConfig, PackingState, objective, pack
from .simulator import EpisodeResult, SimConfig, run_episode
from .space import ParamSpace, Sphere, from_physical, to_physical
from .spatial_index import SpatialIndex

__version__ = "0.1.0"

__all__ = [
    "BaselineKind", "EpisodeResult", "KnowledgeBase", "OuterConfig", "PackingConfig", "PackingState",
    "ParamSpace", "ProbeSet", "RunReport", "SimConfig", "SpatialIndex", "Sphere", "crate_estimate",
    "from_physical", "generate_round", "greedy_sample", "halton", "is_in_known", "kde_density",
    "objective", "pack", "qmc_sample", "run", "run_episode", "score", "smc_sample", "to_physical",
]

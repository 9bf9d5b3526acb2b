"""Nadaraya-Watson sketch and sketch-driven adaptive sampling."""
__version__ = "0.1.0"

from nwsketch._backend import BACKEND
from nwsketch.lsh import LshFamilySpec, SrpHash, collision_kernel, spawn_functions
from nwsketch.nws import NwExactOracle, NwSketch, construct, error_bound, oracle_predict, rows_for_error
from nwsketch.race import RaceSketch, SnapshotError, estimate_mean, estimate_mom
from nwsketch.sampler import SamplerConfig, SamplingPlan, debiased_batch_loss, make_plan, should_update_sketch

__all__ = [
    "BACKEND",
    "LshFamilySpec",
    "NwExactOracle",
    "NwSketch",
    "RaceSketch",
    "SamplerConfig",
    "SamplingPlan",
    "SnapshotError",
    "SrpHash",
    "collision_kernel",
    "construct",
    "debiased_batch_loss",
    "error_bound",
    "estimate_mean",
    "estimate_mom",
    "make_plan",
    "oracle_predict",
    "rows_for_error",
    "should_update_sketch",
    "spawn_functions",
]

"""Multi-group resource allocation optimisation (MG-RAO) learner and simulator."""

from .learner import (
    LearnerConfig,
    MGRAOLearner,
    ParentGroupMap,
    UniformPolicy,
    blending_vector,
    combined_weights,
    eligibility_update,
    group_entropy,
    softmax,
    sum_normalize,
)
from .scenarios import ScenarioConfig, compare, emit, preset, run_scenario

__all__ = [
    "LearnerConfig",
    "MGRAOLearner",
    "ParentGroupMap",
    "UniformPolicy",
    "ScenarioConfig",
    "blending_vector",
    "combined_weights",
    "compare",
    "eligibility_update",
    "emit",
    "group_entropy",
    "preset",
    "run_scenario",
    "softmax",
    "sum_normalize",
]

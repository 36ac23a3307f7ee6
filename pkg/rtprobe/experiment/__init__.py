"""Experiment matrices and sample files."""

from .plan import PRESETS, Case, ExperimentPlan, build_preset, load_plan
from .runner import CaseResult, ExperimentRunner, RunArtifacts
from .samplefile import SampleFile, load_samples, open_samples, persist_samples

__all__ = [
    "PRESETS",
    "Case",
    "CaseResult",
    "ExperimentPlan",
    "ExperimentRunner",
    "RunArtifacts",
    "SampleFile",
    "build_preset",
    "load_plan",
    "load_samples",
    "open_samples",
    "persist_samples",
]

"""One-feature black-box adversarial attacks on prompt-driven trajectory predictors."""
from __future__ import annotations

__version__ = "0.1.0"

from .attack import AttackResult, DEParams, FitnessWeights, grid_oracle, random_attack, run_attack
from .features import FeatureId, Perturbation, apply, bounds_for, enumerate_features
from .metrics import ConfusionMatrix, intention_report, rmse_table
from .predictor import CachedPredictor, RemotePredictor, SurrogatePredictor
from .prompts import Mode, parse_response, render
from .scenario import DrivingScenario, GroundTruth, PredictionResult, validate

__all__ = [
    "AttackResult",
    "CachedPredictor",
    "ConfusionMatrix",
    "DEParams",
    "DrivingScenario",
    "FeatureId",
    "FitnessWeights",
    "GroundTruth",
    "Mode",
    "Perturbation",
    "PredictionResult",
    "RemotePredictor",
    "SurrogatePredictor",
    "__version__",
    "apply",
    "bounds_for",
    "enumerate_features",
    "grid_oracle",
    "intention_report",
    "parse_response",
    "random_attack",
    "render",
    "rmse_table",
    "run_attack",
    "validate",
]

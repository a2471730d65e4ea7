"""Poisson multi-Bernoulli mixture tracking with a partially grid-based
intensity of undetected targets, and receding-horizon sensor management."""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("gridpmbm")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

from .assoc import AssociationParams, update_hypotheses
from .core import (
    BernoulliComponent,
    GaussianDensity,
    GaussianMixtureIntensity,
    GlobalHypothesis,
    GridIntensity,
    GridSpec,
    MotionModel,
    PMBMDensity,
    SensorModel,
    SensorState,
    cv_model,
    cv_sensor_model,
)
from .grid import build_kernel, new_target_bernoulli, predict_grid, update_grid_missed
from .metrics import GospaParams, gospa
from .tracker import Tracker, TrackerConfig

__all__ = [
    "AssociationParams",
    "BernoulliComponent",
    "GaussianDensity",
    "GaussianMixtureIntensity",
    "GlobalHypothesis",
    "GospaParams",
    "GridIntensity",
    "GridSpec",
    "MotionModel",
    "PMBMDensity",
    "SensorModel",
    "SensorState",
    "Tracker",
    "TrackerConfig",
    "__version__",
    "build_kernel",
    "cv_model",
    "cv_sensor_model",
    "gospa",
    "new_target_bernoulli",
    "predict_grid",
    "update_grid_missed",
    "update_hypotheses",
]

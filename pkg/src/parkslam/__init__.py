"""Semantic parking-lot SLAM: slots and fiducial tags in a robust factor graph."""

from .evaluation import EvalReport, SemanticMap, evaluate, landmark_rmse, id_accuracy
from .exceptions import ParkSlamError
from .geometry import Point2, Pose2
from .graph import Graph, LmConfig, optimize
from .io import export_map, import_map
from .localization import Localizer
from .mapping import SlotMapper
from .plot import export_plot
from .simulator import IdInjection, LotSpec, noise_profile, simulate

__version__ = "0.1.0"

__all__ = [
    "EvalReport",
    "Graph",
    "IdInjection",
    "LmConfig",
    "Localizer",
    "LotSpec",
    "ParkSlamError",
    "Point2",
    "Pose2",
    "SemanticMap",
    "SlotMapper",
    "evaluate",
    "export_map",
    "export_plot",
    "id_accuracy",
    "import_map",
    "landmark_rmse",
    "noise_profile",
    "optimize",
    "simulate",
]

"""Hierarchical spatio-temporal feature learning for dynamic point cloud
prediction, with per-level motion decomposition tools."""

__version__ = "0.1.0"

from .network import ArchitectureConfig, Variant  # noqa: F401
from .data import MotionPreset, PointCloudSequence, generate_sequence  # noqa: F401
from .training import TrainConfig, evaluate, train  # noqa: F401

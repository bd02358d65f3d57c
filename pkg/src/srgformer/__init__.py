"""Multimodal graph recommender with hypergraph structure learning and
attention over collaborative signals, built on a small numpy autodiff kernel."""

from .config import PRESETS, TrainConfig
from .errors import DataError, NumericError, ShapeError

__version__ = "0.1.0"

__all__ = ["PRESETS", "TrainConfig", "DataError", "NumericError", "ShapeError", "__version__"]

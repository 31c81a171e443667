"""Tiled storage for video analytics: semantic index, tile layouts and incremental retiling."""
from .cost_model import CostParams, QuerySpec, calibrate, estimate_cost
from .engine import TileStore, decode_stats, reset_decode_stats
from .errors import (ConcurrentRetileError, InvalidLayoutError, OutOfBoundsError,
                     TileStoreError, UnknownVideoError)
from .geometry import (BoundingBox, FrameDims, LayoutConfig, TileLayout, coarse_grained_layout,
                       fine_grained_layout, uniform_layout)
from .semantic_index import LabelPredicate, SemanticIndex
from .tuner import Strategy, TunerConfig, run_strategy

__version__ = "0.1.0"

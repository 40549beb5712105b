"""Pose graph neural network and cascade prediction fusion on synthetic stick figures.

Modules: ``autodiff`` (tape-based reverse mode with conv2d), ``synthgen`` (stick-figure
data), ``posegraph`` (joint graphs), ``pgnn`` (gated message passing), ``backbone``
and ``network`` (multi-stage net with fusion), ``metrics`` and ``training``, ``cli``.
"""

__version__ = "0.1.0"

from .autodiff import Tape, Tensor, backward, conv2d
from .errors import ConfigError, FormatError, GraphError, NumericError, PoseGnnError, ShapeError, ValidationError
from .network import NetConfig, PoseNet, read_checkpoint, write_checkpoint
from .posegraph import PoseGraph, loopy_preset, tree_preset
from .synthgen import generate, lsp_skeleton

__all__ = [
    "Tape", "Tensor", "backward", "conv2d",
    "ConfigError", "FormatError", "GraphError", "NumericError", "PoseGnnError", "ShapeError", "ValidationError",
    "NetConfig", "PoseNet", "read_checkpoint", "write_checkpoint",
    "PoseGraph", "loopy_preset", "tree_preset",
    "generate", "lsp_skeleton",
]

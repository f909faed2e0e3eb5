"""Stacked attention networks for grid-scene image question answering.

Pure numpy implementation: a small tape-based autodiff, LSTM and
convolutional question encoders, K-layer visual attention with query
refinement, SGD-with-momentum training, QA metrics (accuracy, consensus,
WUPS), and attention-map visualization, exercised end to end on a synthetic
multi-hop grid QA task.
"""

from .autodiff import Tensor, Tape, backward, finite_diff_check, no_grad

__version__ = "0.1.0"

__all__ = ["Tensor", "Tape", "backward", "finite_diff_check", "no_grad", "__version__"]

from __future__ import annotations

import numpy as np

from .layers import ShapeError


def mse_loss(pred, target) -> tuple[float, np.ndarray]:
    """Mean squared error over every scalar element, and its gradient."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ShapeError(f"mse shape mismatch {pred.shape} vs {target.shape}")
    if pred.size == 0:
        raise ShapeError("mse over an empty array")
    diff = pred - target
    return float(np.mean(diff**2)), 2.0 * diff / diff.size

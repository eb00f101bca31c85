"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

import numpy as np

from .models import LstmRegressor, Network


def grad_check(model: Network, x, target, step: float = 1e-6) -> float:
    """Max relative error between analytic and central-difference gradients.

    Relative error is ``|a - f| / max(|a|, |f|, 1e-8)`` over every parameter
    element. The model's parameters are restored afterwards.
    """
    _, analytic = model.loss_and_grads(x, target)
    worst = 0.0
    for name, arr in model.params().items():
        g = analytic[name]
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            up = model.loss(x, target)
            flat[j] = orig - step
            down = model.loss(x, target)
            flat[j] = orig
            fd = (up - down) / (2.0 * step)
            a = gflat[j]
            err = abs(a - fd) / max(abs(a), abs(fd), 1e-8)
            worst = max(worst, err)
    return worst


def lstm_check_case(seed: int, hidden_size: int = 8, seq_len: int = 5, num_layers: int = 2,
                    batch: int = 4, io_size: int = 2, residual: float = 1e-3):
    """A random stacked-LSTM regression problem in float64.

    Targets sit a random ``residual``-sized offset away from the current
    prediction. Rounding in the loss value scales with the residual squared
    while the gradient scales with the residual, so near-converged targets
    keep the finite-difference noise floor well below 1e-4 relative error
    even for parameters whose gradient is ~1e-7.
    """
    rng = np.random.default_rng(seed)
    model = LstmRegressor.init(io_size, hidden_size, num_layers, io_size, rng)
    x = rng.uniform(0.0, 1.0, size=(batch, seq_len, io_size))
    target = model.predict(x) + rng.normal(0.0, residual, size=(batch, io_size))
    return model, x, target

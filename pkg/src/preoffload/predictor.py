"""Two-layer LSTM next-position predictor and its error report."""

from __future__ import annotations

import math
import sys
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .data import WindowedDataset, normalize_coords
from .geo import GeoPoint, NormalizationBounds, denormalize
from .nn import AdamState, LstmRegressor, adam_step, clip_by_global_norm, load_checkpoint, save_checkpoint
from .nn.loss import mse_loss


_UNDERFLOW_SLACK = math.sqrt(sys.float_info.min)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class PredictorConfig:
    seq_len: int = 8
    num_layers: int = 2
    hidden_size: int = 64
    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 1e-3
    seed: int = 0
    clip_norm: float | None = 5.0
    dtype: str = "float64"
    # predict the step from the last fix rather than the absolute position
    residual: bool = True

    def __post_init__(self) -> None:
        if self.seq_len < 1 or self.num_layers < 1 or self.hidden_size < 1:
            raise ValueError("seq_len, num_layers and hidden_size must all be >= 1")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.dtype not in ("float64", "float32"):
            raise ValueError(f"unsupported dtype {self.dtype!r}")


@dataclass
class EvalReport:
    mae: float
    mse: float
    rmse: float
    accuracy: float

    def __post_init__(self) -> None:
        assert self.rmse == math.sqrt(self.mse)
        assert self.accuracy == 1.0 - self.rmse
        # squares of errors below ~1e-154 underflow, so allow that much slack
        assert self.mae <= self.rmse * (1.0 + 1e-12) + _UNDERFLOW_SLACK

    @classmethod
    def from_errors(cls, errors: np.ndarray) -> EvalReport:
        """Build the report from per-element prediction errors."""
        errors = np.asarray(errors, dtype=np.float64).reshape(-1)
        if errors.size == 0:
            raise ValueError("cannot evaluate an empty test set")
        mae = float(np.mean(np.abs(errors)))
        mse = float(np.mean(errors**2))
        rmse = math.sqrt(mse)
        return cls(mae, mse, rmse, 1.0 - rmse)

    def csv_row(self) -> str:
        return f"{self.mae!r},{self.mse!r},{self.rmse!r},{self.accuracy!r}"


@dataclass
class TrainedPredictor:
    model: LstmRegressor
    bounds: tuple[NormalizationBounds, NormalizationBounds]
    config: PredictorConfig
    loss_history: list[float] = field(default_factory=list)

    def predict_normalized(self, windows: np.ndarray) -> np.ndarray:
        """(B, seq_len, 2) normalized windows -> (B, 2) normalized positions."""
        windows = np.asarray(windows, dtype=self.model.head.weights.dtype)
        return self.model.predict(windows)

    def predict_coords(self, coord_windows: np.ndarray) -> np.ndarray:
        """(B, seq_len, 2) degree windows -> (B, 2) predicted degrees."""
        out = self.predict_normalized(normalize_coords(coord_windows, self.bounds))
        return np.column_stack(
            [denormalize(out[:, 0], self.bounds[0]), denormalize(out[:, 1], self.bounds[1])]
        ).astype(np.float64)


def train(dataset: WindowedDataset, cfg: PredictorConfig) -> TrainedPredictor:
    """Mini-batch Adam on MSE over shuffled windows; deterministic per ``cfg.seed``."""
    if len(dataset) == 0:
        raise ValueError("empty training set")
    if dataset.seq_len != cfg.seq_len:
        raise ValueError(f"dataset windows have length {dataset.seq_len}, config says {cfg.seq_len}")
    dtype = np.dtype(cfg.dtype)
    rng = np.random.default_rng(cfg.seed)
    model = LstmRegressor.init(2, cfg.hidden_size, cfg.num_layers, 2, rng, dtype, cfg.residual)
    x_all = dataset.inputs.astype(dtype)
    y_all = dataset.targets.astype(dtype)
    params = model.params()
    adam = AdamState(lr=cfg.learning_rate)
    history = []
    n = len(dataset)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for step, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            out, cache = model.forward(x_all[idx])
            loss, dout = mse_loss(out, y_all[idx])
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch} step {step}")
            grads = model.backward(dout.astype(dtype), cache)
            clip_by_global_norm(grads, cfg.clip_norm)
            adam_step(params, grads, adam)
            total += loss * len(idx)
        history.append(total / n)
    return TrainedPredictor(model, dataset.bounds, cfg, history)


def predict_next(p: TrainedPredictor, window: Sequence[GeoPoint]) -> GeoPoint:
    if len(window) != p.config.seq_len:
        raise ValueError(f"window has {len(window)} points, predictor expects {p.config.seq_len}")
    coords = np.array([[g.lat_deg, g.lon_deg] for g in window], dtype=np.float64)
    lat, lon = p.predict_coords(coords[None])[0]
    return GeoPoint(float(np.clip(lat, -90.0, 90.0)), float(np.clip(lon, -180.0, 180.0)))


def evaluate(p: TrainedPredictor, test: WindowedDataset) -> EvalReport:
    """MAE/MSE/RMSE over normalized coordinates (both dims pooled), and 1 - RMSE."""
    if len(test) == 0:
        raise ValueError("cannot evaluate an empty test set")
    pred = p.predict_normalized(test.inputs).astype(np.float64)
    return EvalReport.from_errors(test.targets - pred)


def save_predictor(path, p: TrainedPredictor) -> None:
    meta = {
        "config": asdict(p.config),
        "bounds": [[b.d_min, b.d_max] for b in p.bounds],
        "dims": p.model.dims,
    }
    save_checkpoint(path, p.model.params(), "lstm-predictor", meta)


def load_predictor(path) -> TrainedPredictor:
    kind, meta, arrays = load_checkpoint(path)
    if kind != "lstm-predictor":
        raise ValueError(f"{path} holds a {kind!r} checkpoint, not a predictor")
    cfg = PredictorConfig(**meta["config"])
    dims = meta["dims"]
    model = LstmRegressor.init(
        dims["input_size"], dims["hidden_size"], dims["num_layers"], dims["output_size"],
        np.random.default_rng(0), np.dtype(cfg.dtype), bool(dims.get("residual", 0)),
    )
    model.load_params(arrays)
    bounds = tuple(NormalizationBounds(lo, hi) for lo, hi in meta["bounds"])
    return TrainedPredictor(model, bounds, cfg)  # type: ignore[arg-type]

"""Small networks assembled from the layer primitives."""

from __future__ import annotations

import numpy as np

from .layers import DenseParams, LstmParams, dense_backward, dense_forward, lstm_backward, lstm_forward
from .loss import mse_loss


class Network:
    """Shared parameter-dict plumbing."""

    def params(self) -> dict[str, np.ndarray]:
        raise NotImplementedError

    def load_params(self, arrays: dict[str, np.ndarray]) -> None:
        own = self.params()
        if own.keys() != arrays.keys():
            raise KeyError(f"parameter names differ: {sorted(own)} vs {sorted(arrays)}")
        for name, arr in own.items():
            if arr.shape != arrays[name].shape:
                raise ValueError(f"{name}: shape {arrays[name].shape} != {arr.shape}")
            arr[...] = arrays[name]

    def loss(self, x, target) -> float:
        return mse_loss(self.forward(x)[0], target)[0]

    def loss_and_grads(self, x, target):
        out, cache = self.forward(x)
        loss, dout = mse_loss(out, target)
        return loss, self.backward(dout, cache)


class LstmRegressor(Network):
    """Stacked LSTM whose last hidden state feeds a linear head.

    With ``residual`` the head predicts an offset from the last input step,
    so the output is ``x[:, -1] + head(h_T)``.
    """

    def __init__(self, lstm: list[LstmParams], head: DenseParams, residual: bool = False):
        if residual and head.out_size != lstm[0].input_size:
            raise ValueError("a residual head needs output size == input size")
        self.lstm = lstm
        self.head = head
        self.residual = residual

    @classmethod
    def init(cls, input_size: int, hidden_size: int, num_layers: int, output_size: int,
             rng: np.random.Generator, dtype=np.float64, residual: bool = False) -> LstmRegressor:
        layers = []
        width = input_size
        for _ in range(num_layers):
            layers.append(LstmParams.init(width, hidden_size, rng, dtype))
            width = hidden_size
        return cls(layers, DenseParams.init(hidden_size, output_size, rng, dtype), residual)

    @property
    def dims(self) -> dict[str, int]:
        return {
            "input_size": self.lstm[0].input_size,
            "hidden_size": self.lstm[0].hidden_size,
            "num_layers": len(self.lstm),
            "output_size": self.head.out_size,
            "residual": int(self.residual),
        }

    def params(self) -> dict[str, np.ndarray]:
        out = {}
        for k, p in enumerate(self.lstm):
            out[f"lstm{k}.W"], out[f"lstm{k}.U"], out[f"lstm{k}.b"] = p.W, p.U, p.b
        out["head.weights"], out["head.bias"] = self.head.weights, self.head.bias
        return out

    def forward(self, x):
        """``x`` is (B, T, I); returns (B, O) and the tape."""
        x = np.asarray(x)
        seq = np.swapaxes(x, 0, 1)
        tapes = []
        for p in self.lstm:
            seq, h_last, _, tape = lstm_forward(seq, p)
            tapes.append(tape)
        out = dense_forward(h_last, self.head)
        if self.residual:
            out = out + x[:, -1, :]
        return out, (tapes, h_last)

    def predict(self, x) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, dout, cache) -> dict[str, np.ndarray]:
        tapes, h_last = cache
        grads = {}
        g_head, dh = dense_backward(dout, h_last, self.head)
        grads["head.weights"], grads["head.bias"] = g_head.weights, g_head.bias
        dseq = None
        dh_last = dh
        for k in reversed(range(len(self.lstm))):
            g, dseq, _, _ = lstm_backward(tapes[k], self.lstm[k], dh_seq=dseq, dh_last=dh_last)
            grads[f"lstm{k}.W"], grads[f"lstm{k}.U"], grads[f"lstm{k}.b"] = g.W, g.U, g.b
            dh_last = None
        return {name: grads[name] for name in self.params()}


class Mlp(Network):
    """Fully connected net with ReLU hidden layers and a linear output."""

    def __init__(self, layers: list[DenseParams]):
        self.layers = layers

    @classmethod
    def init(cls, sizes: list[int], rng: np.random.Generator, dtype=np.float64) -> Mlp:
        return cls([DenseParams.init(a, b, rng, dtype) for a, b in zip(sizes[:-1], sizes[1:])])

    @property
    def sizes(self) -> list[int]:
        return [self.layers[0].in_size] + [p.out_size for p in self.layers]

    def params(self) -> dict[str, np.ndarray]:
        out = {}
        for k, p in enumerate(self.layers):
            out[f"fc{k}.weights"], out[f"fc{k}.bias"] = p.weights, p.bias
        return out

    def forward(self, x):
        x = np.asarray(x)
        inputs = []
        for k, p in enumerate(self.layers):
            inputs.append(x)
            x = dense_forward(x, p)
            if k < len(self.layers) - 1:
                x = np.maximum(x, 0.0)
        return x, inputs

    def predict(self, x) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, dout, cache) -> dict[str, np.ndarray]:
        inputs = cache
        grads = {}
        d = dout
        for k in reversed(range(len(self.layers))):
            g, d = dense_backward(d, inputs[k], self.layers[k])
            grads[f"fc{k}.weights"], grads[f"fc{k}.bias"] = g.weights, g.bias
            if k > 0:
                # input of layer k is relu(pre_k-1); relu' is 1 where it was positive
                d = d * (inputs[k] > 0.0)
        return {name: grads[name] for name in self.params()}

    def clone(self) -> Mlp:
        return Mlp([DenseParams(p.weights.copy(), p.bias.copy()) for p in self.layers])

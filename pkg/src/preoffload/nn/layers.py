"""Dense and LSTM layers with hand-written reverse mode.

Batch dimension is optional everywhere: a 1-D vector is treated as a batch
of one and results come back with the same rank that went in.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FORGET_BIAS_INIT = 1.0


class ShapeError(ValueError):
    pass


def sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form avoids overflow warnings for large |x|
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# -- dense -----------------------------------------------------------------


@dataclass
class DenseParams:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)

    def __post_init__(self) -> None:
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ShapeError(f"dense shapes {self.weights.shape} / {self.bias.shape} inconsistent")

    @property
    def in_size(self) -> int:
        return self.weights.shape[1]

    @property
    def out_size(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def init(cls, in_size: int, out_size: int, rng: np.random.Generator, dtype=np.float64) -> DenseParams:
        k = 1.0 / np.sqrt(in_size)
        return cls(
            rng.uniform(-k, k, size=(out_size, in_size)).astype(dtype),
            rng.uniform(-k, k, size=out_size).astype(dtype),
        )

    @classmethod
    def zeros(cls, in_size: int, out_size: int, dtype=np.float64) -> DenseParams:
        return cls(np.zeros((out_size, in_size), dtype), np.zeros(out_size, dtype))


def dense_forward(x: np.ndarray, p: DenseParams) -> np.ndarray:
    if x.shape[-1] != p.in_size:
        raise ShapeError(f"dense expects input width {p.in_size}, got {x.shape[-1]}")
    return x @ p.weights.T + p.bias


def dense_backward(dy: np.ndarray, x: np.ndarray, p: DenseParams) -> tuple[DenseParams, np.ndarray]:
    """Gradients of a dense layer given upstream ``dy`` and the layer input."""
    if dy.shape[-1] != p.out_size or x.shape[-1] != p.in_size:
        raise ShapeError("dense backward shape mismatch")
    dy2 = dy.reshape(-1, p.out_size)
    x2 = x.reshape(-1, p.in_size)
    grads = DenseParams(dy2.T @ x2, dy2.sum(axis=0))
    return grads, dy @ p.weights


# -- LSTM ------------------------------------------------------------------


@dataclass
class LstmParams:
    """Gate-stacked LSTM weights; gate order along axis 0 is i, f, g, o."""

    W: np.ndarray  # (4H, I)
    U: np.ndarray  # (4H, H)
    b: np.ndarray  # (4H,)

    def __post_init__(self) -> None:
        h4 = self.W.shape[0]
        if h4 % 4 or self.U.shape != (h4, h4 // 4) or self.b.shape != (h4,):
            raise ShapeError(f"LSTM shapes W{self.W.shape} U{self.U.shape} b{self.b.shape} inconsistent")

    @property
    def hidden_size(self) -> int:
        return self.U.shape[1]

    @property
    def input_size(self) -> int:
        return self.W.shape[1]

    def _gate(self, arr: np.ndarray, k: int) -> np.ndarray:
        h = self.hidden_size
        return arr[k * h : (k + 1) * h]

    W_i = property(lambda self: self._gate(self.W, 0))
    W_f = property(lambda self: self._gate(self.W, 1))
    W_g = property(lambda self: self._gate(self.W, 2))
    W_o = property(lambda self: self._gate(self.W, 3))
    U_i = property(lambda self: self._gate(self.U, 0))
    U_f = property(lambda self: self._gate(self.U, 1))
    U_g = property(lambda self: self._gate(self.U, 2))
    U_o = property(lambda self: self._gate(self.U, 3))
    b_i = property(lambda self: self._gate(self.b, 0))
    b_f = property(lambda self: self._gate(self.b, 1))
    b_g = property(lambda self: self._gate(self.b, 2))
    b_o = property(lambda self: self._gate(self.b, 3))

    @classmethod
    def init(cls, input_size: int, hidden_size: int, rng: np.random.Generator, dtype=np.float64) -> LstmParams:
        k = 1.0 / np.sqrt(hidden_size)
        p = cls(
            rng.uniform(-k, k, size=(4 * hidden_size, input_size)).astype(dtype),
            rng.uniform(-k, k, size=(4 * hidden_size, hidden_size)).astype(dtype),
            rng.uniform(-k, k, size=4 * hidden_size).astype(dtype),
        )
        p.b_f[:] = FORGET_BIAS_INIT
        return p

    @classmethod
    def zeros(cls, input_size: int, hidden_size: int, dtype=np.float64) -> LstmParams:
        return cls(
            np.zeros((4 * hidden_size, input_size), dtype),
            np.zeros((4 * hidden_size, hidden_size), dtype),
            np.zeros(4 * hidden_size, dtype),
        )


@dataclass
class StepCache:
    x: np.ndarray
    h_prev: np.ndarray
    c_prev: np.ndarray
    i: np.ndarray
    f: np.ndarray
    g: np.ndarray
    o: np.ndarray
    c: np.ndarray
    tanh_c: np.ndarray


@dataclass
class TapeCache:
    steps: list[StepCache]
    squeeze: bool = False

    def __len__(self) -> int:
        return len(self.steps)


def _as_batch(v: np.ndarray) -> np.ndarray:
    return v[None, :] if v.ndim == 1 else v


def lstm_cell_forward(x, h_prev, c_prev, p: LstmParams):
    """One LSTM step. Returns ``(h, c, cache)``."""
    squeeze = np.ndim(x) == 1
    x, h_prev, c_prev = (_as_batch(np.asarray(a)) for a in (x, h_prev, c_prev))
    H = p.hidden_size
    if x.shape[-1] != p.input_size or h_prev.shape[-1] != H or c_prev.shape[-1] != H:
        raise ShapeError(
            f"LSTM cell expects input {p.input_size}/hidden {H}, got {x.shape[-1]}/{h_prev.shape[-1]}/{c_prev.shape[-1]}"
        )
    z = x @ p.W.T + h_prev @ p.U.T + p.b
    i = sigmoid(z[:, :H])
    f = sigmoid(z[:, H : 2 * H])
    g = np.tanh(z[:, 2 * H : 3 * H])
    o = sigmoid(z[:, 3 * H :])
    c = f * c_prev + i * g
    tanh_c = np.tanh(c)
    h = o * tanh_c
    cache = StepCache(x, h_prev, c_prev, i, f, g, o, c, tanh_c)
    if squeeze:
        return h[0], c[0], cache
    return h, c, cache


def lstm_forward(seq, p: LstmParams, h0=None, c0=None):
    """Run an LSTM over ``seq`` shaped (T, I) or (T, B, I).

    Returns ``(hidden_seq, h_T, c_T, cache)`` where ``hidden_seq`` has T rows.
    """
    seq = np.asarray(seq)
    if seq.ndim not in (2, 3) or seq.shape[0] == 0:
        raise ShapeError("lstm_forward needs a non-empty (T, I) or (T, B, I) sequence")
    squeeze = seq.ndim == 2
    if squeeze:
        seq = seq[:, None, :]
    B, H = seq.shape[1], p.hidden_size
    h = np.zeros((B, H), seq.dtype) if h0 is None else _as_batch(np.asarray(h0))
    c = np.zeros((B, H), seq.dtype) if c0 is None else _as_batch(np.asarray(c0))
    steps, hs = [], []
    for x in seq:
        h, c, sc = lstm_cell_forward(x, h, c, p)
        steps.append(sc)
        hs.append(h)
    hseq = np.stack(hs)
    cache = TapeCache(steps, squeeze)
    if squeeze:
        return hseq[:, 0], h[0], c[0], cache
    return hseq, h, c, cache


def lstm_backward(cache: TapeCache, p: LstmParams, dh_seq=None, dh_last=None, dc_last=None):
    """Backpropagation through time.

    ``dh_seq`` is the upstream gradient for every emitted hidden state (may be
    None), ``dh_last``/``dc_last`` extra gradient on the final state.
    Returns ``(grads, dseq, dh0, dc0)``.
    """
    T = len(cache.steps)
    if T == 0:
        raise ShapeError("empty tape")
    B, H = cache.steps[0].h_prev.shape
    if dh_seq is not None:
        dh_seq = np.asarray(dh_seq)
        if cache.squeeze:
            dh_seq = dh_seq[:, None, :]
        if dh_seq.shape != (T, B, H):
            raise ShapeError(f"dh_seq shape {dh_seq.shape} != {(T, B, H)}")
    dh_next = np.zeros((B, H)) if dh_last is None else _as_batch(np.asarray(dh_last)).copy()
    dc_next = np.zeros((B, H)) if dc_last is None else _as_batch(np.asarray(dc_last)).copy()
    dW = np.zeros_like(p.W)
    dU = np.zeros_like(p.U)
    db = np.zeros_like(p.b)
    dxs = [None] * T
    for t in reversed(range(T)):
        s = cache.steps[t]
        dh = dh_next if dh_seq is None else dh_next + dh_seq[t]
        do = dh * s.tanh_c
        dc = dc_next + dh * s.o * (1.0 - s.tanh_c**2)
        dz = np.concatenate(
            [
                dc * s.g * s.i * (1.0 - s.i),
                dc * s.c_prev * s.f * (1.0 - s.f),
                dc * s.i * (1.0 - s.g**2),
                do * s.o * (1.0 - s.o),
            ],
            axis=1,
        )
        dW += dz.T @ s.x
        dU += dz.T @ s.h_prev
        db += dz.sum(axis=0)
        dxs[t] = dz @ p.W
        dh_next = dz @ p.U
        dc_next = dc * s.f
    dseq = np.stack(dxs)
    if cache.squeeze:
        return LstmParams(dW, dU, db), dseq[:, 0], dh_next[0], dc_next[0]
    return LstmParams(dW, dU, db), dseq, dh_next, dc_next

"""Numpy building blocks: flat parameter layouts, LSTM with manual backward, Adam."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ParseError


class ParamLayout:
    """Named, disjoint, covering views into one flat float64 vector."""

    def __init__(self, shapes: list[tuple[str, tuple[int, ...]]]):
        self.shapes = list(shapes)
        self.offsets: dict[str, tuple[int, tuple[int, ...]]] = {}
        pos = 0
        for name, shape in self.shapes:
            if name in self.offsets:
                raise ValueError(f"duplicate parameter name {name}")
            self.offsets[name] = (pos, shape)
            pos += int(np.prod(shape, dtype=np.int64))
        self.size = pos

    def views(self, flat: np.ndarray) -> dict[str, np.ndarray]:
        if flat.shape != (self.size,):
            raise ValueError(f"parameter vector has shape {flat.shape}, expected ({self.size},)")
        out = {}
        for name, (off, shape) in self.offsets.items():
            n = int(np.prod(shape, dtype=np.int64))
            out[name] = flat[off : off + n].reshape(shape)
        return out


def uniform_init(size: int, seed: int, scale: float = 0.1) -> np.ndarray:
    return np.random.default_rng(seed).uniform(-scale, scale, size=size)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def lstm_shapes(prefix: str, n_in: int, hidden: int) -> list[tuple[str, tuple[int, ...]]]:
    return [
        (f"{prefix}.W", (4 * hidden, n_in)),
        (f"{prefix}.U", (4 * hidden, hidden)),
        (f"{prefix}.b", (4 * hidden,)),
    ]


@dataclass
class LSTMCache:
    xs: np.ndarray
    hs: np.ndarray  # (T+1, B, H), hs[0] = h0
    cs: np.ndarray  # (T+1, B, H)
    gates: np.ndarray  # (T, B, 4H) activated gates i, f, o, g


def lstm_step(W, U, b, x, h, c):
    """One LSTM step; x (B, in), h/c (B, H). Gate order: input, forget, output, cell."""
    H = h.shape[-1]
    z = (x @ W.T + b) + h @ U.T
    i = sigmoid(z[..., :H])
    f = sigmoid(z[..., H : 2 * H])
    o = sigmoid(z[..., 2 * H : 3 * H])
    g = np.tanh(z[..., 3 * H :])
    c_new = f * c + i * g
    h_new = o * np.tanh(c_new)
    return h_new, c_new, (i, f, o, g)


def lstm_forward(W, U, b, xs, h0, c0):
    """Run over xs (T, B, in); returns (hs (T, B, H), (h_T, c_T), cache)."""
    T = xs.shape[0]
    B, H = h0.shape
    hs = np.empty((T + 1, B, H))
    cs = np.empty((T + 1, B, H))
    gates = np.empty((T, B, 4 * H))
    hs[0], cs[0] = h0, c0
    # input projection for all steps at once; the recurrent part is sequential
    zx = xs @ W.T + b if T else np.zeros((0, B, 4 * H))
    for t in range(T):
        z = zx[t] + hs[t] @ U.T
        gi = sigmoid(z[:, : 3 * H])
        gg = np.tanh(z[:, 3 * H :])
        c = gi[:, H : 2 * H] * cs[t] + gi[:, :H] * gg
        cs[t + 1] = c
        hs[t + 1] = gi[:, 2 * H :] * np.tanh(c)
        gates[t, :, : 3 * H] = gi
        gates[t, :, 3 * H :] = gg
    return hs[1:], (hs[T].copy(), cs[T].copy()), LSTMCache(xs, hs, cs, gates)


def lstm_backward(W, U, cache: LSTMCache, dhs, dh_T=None, dc_T=None):
    """Backward of :func:`lstm_forward`. Returns (dW, dU, db, dxs, dh0, dc0)."""
    xs, hs, cs, gates = cache.xs, cache.hs, cache.cs, cache.gates
    T = xs.shape[0]
    B, H = hs.shape[1], hs.shape[2]
    dz_all = np.empty((T, B, 4 * H))
    dh = np.zeros((B, H)) if dh_T is None else dh_T.copy()
    dc = np.zeros((B, H)) if dc_T is None else dc_T.copy()
    for t in range(T - 1, -1, -1):
        dh = dh + dhs[t]
        i = gates[t, :, :H]
        f = gates[t, :, H : 2 * H]
        o = gates[t, :, 2 * H : 3 * H]
        g = gates[t, :, 3 * H :]
        tc = np.tanh(cs[t + 1])
        dc = dc + dh * o * (1.0 - tc * tc)
        dz = dz_all[t]
        dz[:, :H] = dc * g * i * (1.0 - i)
        dz[:, H : 2 * H] = dc * cs[t] * f * (1.0 - f)
        dz[:, 2 * H : 3 * H] = dh * tc * o * (1.0 - o)
        dz[:, 3 * H :] = dc * i * (1.0 - g * g)
        dh = dz @ U
        dc = dc * f
    if T:
        flat_dz = dz_all.reshape(T * B, 4 * H)
        dW = flat_dz.T @ xs.reshape(T * B, -1)
        dU = flat_dz.T @ hs[:T].reshape(T * B, H)
        db = flat_dz.sum(axis=0)
        dxs = dz_all @ W
    else:
        dW, dU, db = np.zeros_like(W), np.zeros_like(U), np.zeros(4 * H)
        dxs = np.zeros_like(xs)
    return dW, dU, db, dxs, dh, dc


class Adam:
    def __init__(self, size: int, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> None:
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        mhat = self.m / (1 - self.beta1**self.t)
        vhat = self.v / (1 - self.beta2**self.t)
        params -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def save_checkpoint(path, kind: str, config: dict, params: np.ndarray, extra: dict | None = None) -> None:
    """JSON container: config echo plus the flat parameter array (repr floats round-trip exactly)."""
    doc = {"kind": kind, "config": config, "num_params": int(params.size), "params": params.tolist()}
    if extra:
        doc["extra"] = extra
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n")


def load_checkpoint(path, kind: str) -> tuple[dict, np.ndarray, dict]:
    try:
        doc = json.loads(Path(path).read_text())
    except ValueError as exc:
        raise ParseError(f"malformed checkpoint {path}: {exc}", record=0) from exc
    if doc.get("kind") != kind:
        raise ParseError(f"checkpoint {path} holds {doc.get('kind')!r}, expected {kind!r}", record=0)
    params = np.asarray(doc["params"], dtype=np.float64)
    if params.size != doc["num_params"]:
        raise ParseError(f"checkpoint {path} is truncated", record=0)
    return doc["config"], params, doc.get("extra", {})

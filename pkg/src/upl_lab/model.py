"""Tiny streaming sequence transducer with exact manual backpropagation.

Output units: 0 is blank, 1..vocab_size are labels, vocab_size + 1 is
<eos> when the model carries one. The embedding table has one row per
output unit; row 0 doubles as the predictor's start symbol.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import nn
from .errors import InvalidInputError

BLANK = 0


@dataclass(frozen=True)
class ModelConfig:
    feature_dim: int = 8
    vocab_size: int = 16
    encoder_layers: int = 2
    encoder_hidden: int = 32
    stride_schedule: tuple[int, ...] = (2,)
    predictor_embed: int = 16
    predictor_hidden: int = 32
    joiner_hidden: int = 32
    has_eos: bool = False

    def __post_init__(self):
        object.__setattr__(self, "stride_schedule", tuple(int(s) for s in self.stride_schedule))
        if any(s < 1 for s in self.stride_schedule):
            raise InvalidInputError(f"stride factors must be >= 1, got {self.stride_schedule}")
        if len(self.stride_schedule) > self.encoder_layers:
            raise InvalidInputError("stride_schedule has more entries than encoder layers")
        if self.encoder_layers < 1 or self.vocab_size < 1 or self.feature_dim < 1:
            raise InvalidInputError("encoder_layers, vocab_size and feature_dim must be >= 1")
        if min(self.encoder_hidden, self.predictor_embed, self.predictor_hidden, self.joiner_hidden) < 1:
            raise InvalidInputError("layer widths must be >= 1")

    @property
    def stride(self) -> int:
        return math.prod(self.stride_schedule)

    @property
    def output_count(self) -> int:
        return self.vocab_size + 1 + int(self.has_eos)

    @property
    def eos_id(self) -> int | None:
        return self.vocab_size + 1 if self.has_eos else None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stride_schedule"] = list(self.stride_schedule)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def param_layout(cfg: ModelConfig) -> nn.ParamLayout:
    H, E, P, J, K = cfg.encoder_hidden, cfg.predictor_embed, cfg.predictor_hidden, cfg.joiner_hidden, cfg.output_count
    shapes = []
    for i in range(cfg.encoder_layers):
        shapes += nn.lstm_shapes(f"enc{i}", cfg.feature_dim if i == 0 else H, H)
        if i < len(cfg.stride_schedule):
            shapes.append((f"reduce{i}", (H, cfg.stride_schedule[i] * H)))
    shapes.append(("embed", (K, E)))
    shapes += nn.lstm_shapes("pred", E, P)
    shapes += [
        ("join.We", (J, H)),
        ("join.Wp", (J, P)),
        ("join.b", (J,)),
        ("join.Wo", (K, J)),
        ("join.bo", (K,)),
    ]
    return nn.ParamLayout(shapes)


class Transducer:
    """A model configuration bundled with its flat parameter vector."""

    def __init__(self, config: ModelConfig, params: np.ndarray):
        self.config = config
        self.layout = param_layout(config)
        self.params = np.asarray(params, dtype=np.float64)
        self.p = self.layout.views(self.params)

    @classmethod
    def init(cls, config: ModelConfig, seed: int) -> "Transducer":
        return cls(config, init_params(config, seed))

    def copy(self) -> "Transducer":
        return Transducer(self.config, self.params.copy())

    # --- streaming encoder -------------------------------------------------

    def encoder_init_state(self):
        H = self.config.encoder_hidden
        return tuple((np.zeros((1, H)), np.zeros((1, H))) for _ in range(self.config.encoder_layers))

    def encoder_full(self, frames: np.ndarray) -> np.ndarray:
        xs = pad_frames(frames, self.config.stride)[:, None, :]
        rows, _, _ = _encoder_forward(self.p, self.config, xs, None)
        return rows[:, 0, :]

    def predictor_init(self):
        P = self.config.predictor_hidden
        return self.predictor_step(BLANK, (np.zeros(P), np.zeros(P)))

    def predictor_step(self, token: int, state):
        """Feed one token; returns (output, new_state)."""
        h, c = state
        x = self.p["embed"][token]
        h, c, _ = nn.lstm_step(self.p["pred.W"], self.p["pred.U"], self.p["pred.b"], x, h, c)
        return h, (h, c)

    def joint_logprobs(self, enc_row: np.ndarray, pred_out: np.ndarray) -> np.ndarray:
        """Log-softmax joiner output; pred_out may be (P,) or (n, P)."""
        p = self.p
        a = np.tanh((p["join.We"] @ enc_row) + pred_out @ p["join.Wp"].T + p["join.b"])
        z = a @ p["join.Wo"].T + p["join.bo"]
        return log_softmax(z)


def init_params(cfg: ModelConfig, seed: int) -> np.ndarray:
    return nn.uniform_init(param_layout(cfg).size, seed)


def pad_frames(frames: np.ndarray, stride: int) -> np.ndarray:
    n = frames.shape[0]
    target = -(-n // stride) * stride
    if target == n:
        return frames
    out = np.zeros((target, frames.shape[1]))
    out[:n] = frames
    return out


def log_softmax(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=-1, keepdims=True)
    s = z - m
    return s - np.log(np.exp(s).sum(axis=-1, keepdims=True))


def time_reduce(rows: np.ndarray, factor: int, projection: np.ndarray) -> np.ndarray:
    """Concatenate groups of ``factor`` consecutive rows (zero-padded tail) and project."""
    if factor < 1:
        raise InvalidInputError("factor must be >= 1")
    rows = np.asarray(rows, dtype=np.float64)
    n, d = rows.shape
    groups = -(-n // factor)
    padded = np.zeros((groups * factor, d))
    padded[:n] = rows
    return padded.reshape(groups, factor * d) @ projection.T


def _reduce_batch(xs, factor):
    """(n, B, d) -> (n/factor, B, factor*d); n must divide."""
    n, B, d = xs.shape
    return xs.reshape(n // factor, factor, B, d).transpose(0, 2, 1, 3).reshape(n // factor, B, factor * d)


def _unreduce_batch(dcat, factor, d):
    m, B, _ = dcat.shape
    return dcat.reshape(m, B, factor, d).transpose(0, 2, 1, 3).reshape(m * factor, B, d)


def _encoder_forward(p, cfg: ModelConfig, xs, states):
    """xs (T, B, F) with T a multiple of the overall stride."""
    B = xs.shape[1]
    H = cfg.encoder_hidden
    caches = []
    new_states = []
    h = xs
    for i in range(cfg.encoder_layers):
        if states is None:
            h0, c0 = np.zeros((B, H)), np.zeros((B, H))
        else:
            h0, c0 = states[i]
        out, st, cache = nn.lstm_forward(p[f"enc{i}.W"], p[f"enc{i}.U"], p[f"enc{i}.b"], h, h0, c0)
        new_states.append(st)
        red = None
        if i < len(cfg.stride_schedule):
            s = cfg.stride_schedule[i]
            cat = _reduce_batch(out, s)
            red = (s, cat)
            out = cat @ p[f"reduce{i}"].T
        caches.append((cache, red))
        h = out
    return h, tuple(new_states), caches


def _encoder_backward(p, cfg: ModelConfig, caches, d_rows, grads):
    H = cfg.encoder_hidden
    d = d_rows
    for i in range(cfg.encoder_layers - 1, -1, -1):
        cache, red = caches[i]
        if red is not None:
            s, cat = red
            m = cat.shape[0] * cat.shape[1]
            grads[f"reduce{i}"] += d.reshape(m, H).T @ cat.reshape(m, s * H)
            d = _unreduce_batch(d @ p[f"reduce{i}"], s, H)
        dW, dU, db, dxs, _, _ = nn.lstm_backward(p[f"enc{i}.W"], p[f"enc{i}.U"], cache, d)
        grads[f"enc{i}.W"] += dW
        grads[f"enc{i}.U"] += dU
        grads[f"enc{i}.b"] += db
        d = dxs


def encoder_stream_step(model: Transducer, state, chunk: np.ndarray):
    """Consume a chunk of frames (length a multiple of the stride); returns (state', rows)."""
    chunk = np.asarray(chunk, dtype=np.float64).reshape(-1, model.config.feature_dim)
    S = model.config.stride
    if chunk.shape[0] % S:
        raise InvalidInputError(f"chunk length {chunk.shape[0]} is not a multiple of stride {S}")
    if chunk.shape[0] == 0:
        return state, np.zeros((0, model.config.encoder_hidden))
    rows, new_state, _ = _encoder_forward(model.p, model.config, chunk[:, None, :], state)
    return new_state, rows[:, 0, :]


@dataclass
class LogitLattice:
    values: np.ndarray  # (T', U+1, K)
    stride: int
    num_frames: int

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.values.shape


@dataclass
class BatchCache:
    cfg: ModelConfig
    enc_caches: list
    enc: np.ndarray  # (B, T', H)
    pred_cache: nn.LSTMCache
    pred: np.ndarray  # (B, U+1, P)
    tokens_in: np.ndarray  # (U+1, B)
    act: np.ndarray  # (B, T', U+1, J)


def _check_target(cfg: ModelConfig, target: Sequence[int]) -> None:
    hi = cfg.output_count - 1
    for tok in target:
        if not 1 <= tok <= hi:
            raise InvalidInputError(f"target token {tok} outside [1, {hi}]")


def batch_forward(model: Transducer, frames_list: Sequence[np.ndarray], targets: Sequence[Sequence[int]]):
    """Lattices for a padded batch: returns (Z (B, T'max, Umax+1, K), T' per item, cache)."""
    cfg, p = model.config, model.p
    S = cfg.stride
    B = len(frames_list)
    for t in targets:
        _check_target(cfg, t)
    tp = [-(-f.shape[0] // S) for f in frames_list]
    Tmax = max(tp) * S
    xs = np.zeros((Tmax, B, cfg.feature_dim))
    for b, f in enumerate(frames_list):
        xs[: f.shape[0], b] = f
    enc, _, enc_caches = _encoder_forward(p, cfg, xs, None)
    Umax = max(len(t) for t in targets)
    tokens_in = np.zeros((Umax + 1, B), dtype=np.int64)
    for b, t in enumerate(targets):
        tokens_in[1 : len(t) + 1, b] = t
    P = cfg.predictor_hidden
    emb = p["embed"][tokens_in]
    pred, _, pred_cache = nn.lstm_forward(p["pred.W"], p["pred.U"], p["pred.b"], emb, np.zeros((B, P)), np.zeros((B, P)))
    enc_b = enc.transpose(1, 0, 2)
    pred_b = pred.transpose(1, 0, 2)
    ze = enc_b @ p["join.We"].T
    zp = pred_b @ p["join.Wp"].T
    act = np.tanh(ze[:, :, None, :] + zp[:, None, :, :] + p["join.b"])
    Z = act @ p["join.Wo"].T + p["join.bo"]
    return Z, tp, BatchCache(cfg, enc_caches, enc_b, pred_cache, pred_b, tokens_in, act)


def batch_backward(model: Transducer, cache: BatchCache, dZ: np.ndarray) -> np.ndarray:
    """Gradient of <dZ, Z> with respect to the flat parameter vector."""
    cfg, p = model.config, model.p
    grad_flat = np.zeros(model.layout.size)
    g = model.layout.views(grad_flat)
    act = cache.act
    J = cfg.joiner_hidden
    K = cfg.output_count
    g["join.Wo"] += dZ.reshape(-1, K).T @ act.reshape(-1, J)
    g["join.bo"] += dZ.reshape(-1, K).sum(axis=0)
    da = (dZ @ p["join.Wo"]) * (1.0 - act * act)
    g["join.b"] += da.reshape(-1, J).sum(axis=0)
    dze = da.sum(axis=2)  # (B, T', J)
    dzp = da.sum(axis=1)  # (B, U+1, J)
    g["join.We"] += dze.reshape(-1, J).T @ cache.enc.reshape(-1, cfg.encoder_hidden)
    g["join.Wp"] += dzp.reshape(-1, J).T @ cache.pred.reshape(-1, cfg.predictor_hidden)
    d_enc = (dze @ p["join.We"]).transpose(1, 0, 2)
    d_pred = (dzp @ p["join.Wp"]).transpose(1, 0, 2)
    dW, dU, db, demb, _, _ = nn.lstm_backward(p["pred.W"], p["pred.U"], cache.pred_cache, d_pred)
    g["pred.W"] += dW
    g["pred.U"] += dU
    g["pred.b"] += db
    np.add.at(g["embed"], cache.tokens_in.reshape(-1), demb.reshape(-1, cfg.predictor_embed))
    _encoder_backward(p, cfg, cache.enc_caches, d_enc, g)
    return grad_flat


def logit_lattice(model: Transducer, utt, target: Sequence[int]) -> LogitLattice:
    frames = utt.frames if hasattr(utt, "frames") else np.asarray(utt, dtype=np.float64)
    target = [int(t) for t in target]
    Z, tp, _ = batch_forward(model, [frames], [target])
    return LogitLattice(Z[0, : tp[0], : len(target) + 1], model.config.stride, frames.shape[0])


def backprop(model: Transducer, utt, target: Sequence[int], grad_lattice) -> np.ndarray:
    frames = utt.frames if hasattr(utt, "frames") else np.asarray(utt, dtype=np.float64)
    target = [int(t) for t in target]
    gl = grad_lattice.values if isinstance(grad_lattice, LogitLattice) else np.asarray(grad_lattice)
    Z, tp, cache = batch_forward(model, [frames], [target])
    expected = (tp[0], len(target) + 1, model.config.output_count)
    if gl.shape != expected:
        raise InvalidInputError(f"grad_lattice has shape {gl.shape}, expected {expected}")
    return batch_backward(model, cache, gl[None])

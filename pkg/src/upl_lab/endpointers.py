"""Static, neural and end-to-end endpointers, composed first-trigger-wins."""
from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import nn
from .corpus import Corpus
from .errors import ConfigurationError, InvalidInputError, TrainingError

log = logging.getLogger(__name__)

STATIC = "Static"
NEURAL = "Neural"
E2E = "E2E"
AUDIO_EXHAUSTED = "AudioExhausted"
CAUSE_ORDER = (STATIC, NEURAL, E2E)

_EPS_MS = 1e-9


# --- pure trigger rules -------------------------------------------------------


def static_check(last_processed_audio_ms: float, last_label_audio_ms: float, trailing_silence_s: float) -> bool:
    return last_processed_audio_ms - last_label_audio_ms >= trailing_silence_s * 1000.0 - _EPS_MS


def smooth(probs: Sequence[float], window: int) -> np.ndarray:
    """Trailing moving average; the first frames average over what is available."""
    p = np.asarray(probs, dtype=np.float64)
    if p.size == 0:
        return p
    csum = np.concatenate([[0.0], np.cumsum(p)])
    idx = np.arange(1, p.size + 1)
    lo = np.maximum(idx - window, 0)
    return (csum[idx] - csum[lo]) / (idx - lo)


def nep_trigger_frame(probs: Sequence[float], window: int, threshold: float) -> int | None:
    """Index of the first frame whose smoothed probability reaches ``threshold``."""
    s = smooth(probs, window)
    hits = np.nonzero(s >= threshold)[0]
    return int(hits[0]) if hits.size else None


def nep_check(probs_so_far: Sequence[float], window: int, threshold: float) -> bool:
    return nep_trigger_frame(probs_so_far, window, threshold) is not None


def e2e_check(best_terminal: bool, eos_logprob: float | None, threshold: float) -> bool:
    return bool(best_terminal) and eos_logprob is not None and eos_logprob > threshold


# --- neural endpointer model ---------------------------------------------------


@dataclass(frozen=True)
class NEPConfig:
    feature_dim: int = 8
    hidden: int = 16

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class NEPTrainConfig:
    hidden: int = 16
    epochs: int = 10
    lr: float = 0.01
    batch_size: int = 32
    seed: int = 0

    def to_dict(self):
        return asdict(self)


def nep_layout(cfg: NEPConfig) -> nn.ParamLayout:
    return nn.ParamLayout(nn.lstm_shapes("lstm", cfg.feature_dim, cfg.hidden) + [("out.w", (cfg.hidden,)), ("out.b", (1,))])


class NeuralEndpointerModel:
    """Single-layer LSTM frame classifier: P(speech has ended | frames so far)."""

    def __init__(self, config: NEPConfig, params: np.ndarray):
        self.config = config
        self.layout = nep_layout(config)
        self.params = np.asarray(params, dtype=np.float64)
        self.p = self.layout.views(self.params)

    @classmethod
    def init(cls, config: NEPConfig, seed: int) -> "NeuralEndpointerModel":
        return cls(config, nn.uniform_init(nep_layout(config).size, seed))

    def init_state(self):
        H = self.config.hidden
        return np.zeros((1, H)), np.zeros((1, H))

    def stream_probs(self, frames: np.ndarray, state):
        """Per-frame probabilities for a block of frames; returns (probs, state')."""
        if frames.shape[0] == 0:
            return np.zeros(0), state
        p = self.p
        hs, st, _ = nn.lstm_forward(p["lstm.W"], p["lstm.U"], p["lstm.b"], frames[:, None, :], *state)
        logits = hs[:, 0, :] @ p["out.w"] + p["out.b"][0]
        return nn.sigmoid(logits), st

    def frame_probs(self, frames: np.ndarray) -> np.ndarray:
        return self.stream_probs(frames, self.init_state())[0]


def _nep_batch(model: NeuralEndpointerModel, utts):
    p = model.p
    H = model.config.hidden
    B = len(utts)
    T = max(u.num_frames for u in utts)
    xs = np.zeros((T, B, model.config.feature_dim))
    labels = np.zeros((T, B))
    mask = np.zeros((T, B))
    for b, u in enumerate(utts):
        xs[: u.num_frames, b] = u.frames
        labels[u.speech_end_frame + 1 : u.num_frames, b] = 1.0
        mask[: u.num_frames, b] = 1.0
    hs, _, cache = nn.lstm_forward(p["lstm.W"], p["lstm.U"], p["lstm.b"], xs, np.zeros((B, H)), np.zeros((B, H)))
    logits = hs @ p["out.w"] + p["out.b"][0]
    # binary cross-entropy from logits, stable form
    bce = np.maximum(logits, 0) - logits * labels + np.log1p(np.exp(-np.abs(logits)))
    n = mask.sum()
    loss = float((bce * mask).sum() / n)
    dlogit = (nn.sigmoid(logits) - labels) * mask / n
    grad = np.zeros(model.layout.size)
    g = model.layout.views(grad)
    g["out.w"] += np.einsum("tb,tbh->h", dlogit, hs)
    g["out.b"] += dlogit.sum()
    dhs = dlogit[:, :, None] * p["out.w"]
    dW, dU, db, _, _, _ = nn.lstm_backward(p["lstm.W"], p["lstm.U"], cache, dhs)
    g["lstm.W"] += dW
    g["lstm.U"] += dU
    g["lstm.b"] += db
    return loss, grad


def nep_train(corpus: Corpus, cfg: NEPTrainConfig = NEPTrainConfig()):
    """Per-frame BCE training; label of frame i is 1 iff i > speech_end_frame. Returns (model, log)."""
    if len(corpus) == 0:
        raise InvalidInputError("cannot train the neural endpointer on an empty corpus")
    model = NeuralEndpointerModel.init(NEPConfig(corpus.config.feature_dim, cfg.hidden), cfg.seed)
    adam = nn.Adam(model.layout.size, cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    utts = list(corpus)
    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(utts))
        total = 0.0
        for start in range(0, len(utts), cfg.batch_size):
            batch = [utts[i] for i in order[start : start + cfg.batch_size]]
            loss, grad = _nep_batch(model, batch)
            if not math.isfinite(loss):
                raise TrainingError("non-finite endpointer loss", epoch, batch[0].id)
            total += loss * len(batch)
            if cfg.lr != 0.0:
                adam.step(model.params, grad)
        history.append({"epoch": epoch, "mean_loss": total / len(utts)})
        log.info("nep epoch %d loss %.4f", epoch, history[-1]["mean_loss"])
    return model, history


def nep_frame_accuracy(model: NeuralEndpointerModel, corpus: Corpus) -> float:
    correct = total = 0
    for u in corpus:
        pred = model.frame_probs(u.frames) >= 0.5
        truth = np.arange(u.num_frames) > u.speech_end_frame
        correct += int((pred == truth).sum())
        total += u.num_frames
    return correct / total


def save_nep(model: NeuralEndpointerModel, path, extra: dict | None = None) -> None:
    nn.save_checkpoint(path, "neural_endpointer", model.config.to_dict(), model.params, extra)


def load_nep(path) -> NeuralEndpointerModel:
    cfg, params, _ = nn.load_checkpoint(path, "neural_endpointer")
    return NeuralEndpointerModel(NEPConfig(**cfg), params)


# --- specs and stateful checkers -------------------------------------------------


@dataclass(frozen=True)
class StaticSpec:
    trailing_silence_s: float = 0.9

    def __post_init__(self):
        if self.trailing_silence_s <= 0:
            raise InvalidInputError("trailing_silence_s must be > 0")


@dataclass(frozen=True)
class NeuralSpec:
    model: NeuralEndpointerModel
    window_frames: int = 5
    threshold: float = 0.7

    def __post_init__(self):
        if self.window_frames < 1:
            raise InvalidInputError("window_frames must be >= 1")
        if not 0 < self.threshold < 1:
            raise InvalidInputError("threshold must be in (0, 1)")


@dataclass(frozen=True)
class E2ESpec:
    eos_logprob_threshold: float = math.log(0.5)


@dataclass(frozen=True)
class EndpointerSpec:
    static: StaticSpec | None = None
    neural: NeuralSpec | None = None
    e2e: E2ESpec | None = None

    def build(self, transducer=None) -> "CompositeEndpointer":
        return compose(self, transducer)

    def label(self) -> str:
        return "".join(tag for tag, part in (("S", self.static), ("N", self.neural), ("E", self.e2e)) if part) or "none"


class StaticEndpointer:
    cause = STATIC

    def __init__(self, spec: StaticSpec):
        self.spec = spec

    def check(self, view) -> bool:
        return static_check(view.processed_audio_ms, view.last_label_audio_ms, self.spec.trailing_silence_s)


class NeuralEndpointer:
    cause = NEURAL

    def __init__(self, spec: NeuralSpec):
        self.spec = spec
        self.state = spec.model.init_state()
        self.recent: deque[float] = deque(maxlen=spec.window_frames)
        self.fired = False

    def check(self, view) -> bool:
        probs, self.state = self.spec.model.stream_probs(view.frames, self.state)
        for p in probs:
            self.recent.append(float(p))
            if sum(self.recent) / len(self.recent) >= self.spec.threshold:
                self.fired = True
        return self.fired


class E2EEndpointer:
    cause = E2E

    def __init__(self, spec: E2ESpec):
        self.spec = spec

    def check(self, view) -> bool:
        return e2e_check(view.best.terminal, view.best.eos_logprob, self.spec.eos_logprob_threshold)


class CompositeEndpointer:
    """Evaluates every configured checker at each chunk completion; the first to fire wins."""

    def __init__(self, checkers):
        self.checkers = sorted(checkers, key=lambda c: CAUSE_ORDER.index(c.cause))

    def check(self, view) -> str | None:
        fired = None
        for c in self.checkers:
            # every checker sees every chunk so stateful ones stay in sync
            if c.check(view) and fired is None:
                fired = c.cause
        return fired


def compose(spec: EndpointerSpec, transducer=None) -> CompositeEndpointer:
    checkers = []
    if spec.static is not None:
        checkers.append(StaticEndpointer(spec.static))
    if spec.neural is not None:
        checkers.append(NeuralEndpointer(spec.neural))
    if spec.e2e is not None:
        if transducer is not None and transducer.config.eos_id is None:
            raise ConfigurationError("E2E endpointer needs a transducer trained with an <eos> output")
        checkers.append(E2EEndpointer(spec.e2e))
    return CompositeEndpointer(checkers)

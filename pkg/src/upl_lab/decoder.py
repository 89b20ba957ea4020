"""Streaming transducer beam search under a discrete-event virtual clock.

Chunk ``c`` is fully available at ``arrive_c``; its compute starts at
``max(arrive_c, done_{c-1})`` and takes ``cost(chunk)`` virtual ms. The
endpointer is consulted once per chunk, at ``done_c``.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .corpus import Utterance
from .errors import DecodeError, InvalidInputError
from .model import BLANK, Transducer, encoder_stream_step, pad_frames

# --- configuration -----------------------------------------------------------


@dataclass(frozen=True)
class Fixed:
    ms_per_chunk: float = 0.0

    def cost(self, n_frames: int) -> float:
        return self.ms_per_chunk


@dataclass(frozen=True)
class Linear:
    base_ms: float = 0.0
    ms_per_frame: float = 0.0

    def cost(self, n_frames: int) -> float:
        return self.base_ms + self.ms_per_frame * n_frames


@dataclass(frozen=True)
class Measured:
    """Wall-clock of the actual forward pass; not deterministic."""


CostModel = Fixed | Linear | Measured


def cost_model_from_dict(d: dict) -> CostModel:
    kind = d.get("kind", "fixed")
    if kind == "fixed":
        return Fixed(float(d.get("ms_per_chunk", 0.0)))
    if kind == "linear":
        return Linear(float(d.get("base_ms", 0.0)), float(d.get("ms_per_frame", 0.0)))
    if kind == "measured":
        return Measured()
    raise InvalidInputError(f"unknown cost model {kind!r}")


def cost_model_to_dict(c: CostModel) -> dict:
    kind = {Fixed: "fixed", Linear: "linear", Measured: "measured"}[type(c)]
    return {"kind": kind, **asdict(c)}


@dataclass(frozen=True)
class StreamConfig:
    frame_shift_ms: float = 10.0
    chunk_frames: int | None = None  # None -> 2 * stride
    cost_model: CostModel = Fixed(0.0)

    def resolve_chunk(self, stride: int) -> int:
        chunk = 2 * stride if self.chunk_frames is None else self.chunk_frames
        if chunk < stride or chunk % stride:
            raise InvalidInputError(f"chunk_frames {chunk} must be a positive multiple of stride {stride}")
        return chunk

    def validate(self) -> None:
        c = self.cost_model
        if isinstance(c, Fixed) and c.ms_per_chunk < 0:
            raise InvalidInputError("ms_per_chunk must be >= 0")
        if isinstance(c, Linear) and (c.base_ms < 0 or c.ms_per_frame < 0):
            raise InvalidInputError("linear costs must be >= 0")
        if self.frame_shift_ms <= 0:
            raise InvalidInputError("frame_shift_ms must be > 0")


@dataclass(frozen=True)
class BeamConfig:
    beam_size: int = 5
    max_symbols_per_frame: int = 10

    def __post_init__(self):
        if self.beam_size < 1 or self.max_symbols_per_frame < 1:
            raise InvalidInputError("beam_size and max_symbols_per_frame must be >= 1")


# --- hypotheses --------------------------------------------------------------


@dataclass
class Hypothesis:
    tokens: tuple[int, ...]
    log_score: float
    pred_out: np.ndarray = field(repr=False)
    pred_state: tuple = field(repr=False)
    terminal: bool = False
    last_emit_frame: int = -1  # encoder frame of the last label (not <eos>)
    eos_logprob: float | None = None


def _rank_key(score: float, tokens: tuple[int, ...]):
    return (-score, len(tokens), tokens)


def _logadd(a: float, b: float) -> float:
    if a < b:
        a, b = b, a
    if b == -math.inf:
        return a
    return a + math.log1p(math.exp(b - a))


class PredictorCache:
    """Predictor outputs keyed by token prefix; the predictor is a pure function of it."""

    def __init__(self, model: Transducer):
        self.model = model
        self._cache: dict[tuple[int, ...], tuple[np.ndarray, tuple]] = {}

    def initial(self):
        if () not in self._cache:
            self._cache[()] = self.model.predictor_init()
        return self._cache[()]

    def extend(self, tokens: tuple[int, ...], token: int, state):
        key = tokens + (token,)
        hit = self._cache.get(key)
        if hit is None:
            hit = self.model.predictor_step(token, state)
            self._cache[key] = hit
        return hit


def initial_hypothesis(model: Transducer, cache: PredictorCache | None = None) -> Hypothesis:
    out, state = (cache or PredictorCache(model)).initial()
    return Hypothesis((), 0.0, out, state)


def merge_into(pool: dict, hyp: Hypothesis) -> None:
    """Insert ``hyp``; an existing hypothesis with identical tokens absorbs its probability mass."""
    old = pool.get(hyp.tokens)
    if old is None:
        pool[hyp.tokens] = hyp
        return
    merged = _logadd(old.log_score, hyp.log_score)
    keep = old if _rank_key(old.log_score, old.tokens) <= _rank_key(hyp.log_score, hyp.tokens) else hyp
    pool[hyp.tokens] = replace(keep, log_score=merged)


def beam_step(
    model: Transducer,
    hyps: Sequence[Hypothesis],
    enc_row: np.ndarray,
    beam_cfg: BeamConfig,
    frame: int = 0,
    cache: PredictorCache | None = None,
) -> list[Hypothesis]:
    """Advance the beam over one encoder frame.

    At each expansion step every active hypothesis contributes a blank
    extension (which finishes the frame) and label extensions; the best
    ``beam_size`` of finished and unfinished candidates survive. The frame
    is complete once no unfinished candidate survives.
    """
    if not hyps:
        raise InvalidInputError("beam_step needs at least one hypothesis")
    cache = cache or PredictorCache(model)
    K = beam_cfg.beam_size
    eos = model.config.eos_id
    done: dict[tuple[int, ...], Hypothesis] = {}
    active: list[Hypothesis] = []
    for h in hyps:
        if h.terminal:
            merge_into(done, h)
        else:
            active.append(h)
    for step in range(beam_cfg.max_symbols_per_frame + 1):
        if not active:
            break
        logp = model.joint_logprobs(enc_row, np.stack([h.pred_out for h in active]))
        if not np.all(np.isfinite(logp)):
            raise DecodeError("non-finite joiner output", chunk_index=-1)
        for h, lp in zip(active, logp):
            merge_into(done, replace(h, log_score=h.log_score + float(lp[BLANK])))
        pool = [(_rank_key(h.log_score, h.tokens), 0, h) for h in done.values()]
        if step < beam_cfg.max_symbols_per_frame:
            n_labels = logp.shape[1] - 1
            top = min(K, n_labels)
            for i, (h, lp) in enumerate(zip(active, logp)):
                labels = lp[1:]
                idx = np.argpartition(-labels, top - 1)[:top] if top < n_labels else np.arange(n_labels)
                for j in idx:
                    k = int(j) + 1
                    score = h.log_score + float(lp[k])
                    tokens = h.tokens + (k,)
                    pool.append((_rank_key(score, tokens), 1, (i, k, score, float(lp[k]))))
        pool.sort(key=lambda e: (e[0], e[1]))
        done = {}
        next_active = []
        for _, kind, item in pool[:K]:
            if kind == 0:
                done[item.tokens] = item
                continue
            i, k, score, lpk = item
            src = active[i]
            if k == eos:
                merge_into(done, Hypothesis(src.tokens + (k,), score, src.pred_out, src.pred_state,
                                            terminal=True, last_emit_frame=src.last_emit_frame, eos_logprob=lpk))
            else:
                out, state = cache.extend(src.tokens, k, src.pred_state)
                next_active.append(Hypothesis(src.tokens + (k,), score, out, state, last_emit_frame=frame))
        active = next_active
    return sorted(done.values(), key=lambda h: _rank_key(h.log_score, h.tokens))[:K]


def strip_eos(tokens: Sequence[int], eos: int | None) -> tuple[int, ...]:
    if eos is None:
        return tuple(tokens)
    return tuple(t for t in tokens if t != eos)


# --- trace -------------------------------------------------------------------


@dataclass
class ChunkEvent:
    chunk_index: int
    num_frames: int
    arrive_time: float
    start_time: float
    done_time: float
    compute_ms: float
    best_tokens: tuple[int, ...]


@dataclass
class DecodeTrace:
    events: list[ChunkEvent]
    final_tokens: tuple[int, ...]
    emission_times: list[float]
    mic_close_time: float
    close_cause: str
    audio_ms: float
    frame_shift_ms: float

    def to_lines(self, utt_id: int | None = None) -> list[str]:
        lines = []
        for e in self.events:
            d = asdict(e)
            d["best_tokens"] = list(e.best_tokens)
            if utt_id is not None:
                d = {"utt_id": utt_id, **d}
            lines.append(json.dumps(d))
        summary = {
            "final_tokens": list(self.final_tokens),
            "emission_times": self.emission_times,
            "mic_close_time": self.mic_close_time,
            "close_cause": self.close_cause,
        }
        if utt_id is not None:
            summary = {"utt_id": utt_id, **summary}
        lines.append(json.dumps(summary))
        return lines


@dataclass
class DecodeResult:
    tokens: tuple[int, ...]
    hypothesis: Hypothesis
    trace: DecodeTrace


@dataclass
class ChunkView:
    """What an endpointer may look at when chunk ``chunk_index`` completes."""

    chunk_index: int
    done_time: float
    processed_audio_ms: float
    last_label_audio_ms: float
    frames: np.ndarray
    best: Hypothesis


def emission_times(snapshots: Sequence[tuple[int, ...]], done_times: Sequence[float], final: Sequence[int]) -> list[float]:
    """Earliest chunk completion whose best-hypothesis snapshot starts with each final prefix."""
    out = []
    c = 0
    final = tuple(final)
    for i in range(len(final)):
        prefix = final[: i + 1]
        while c < len(snapshots) and snapshots[c][: i + 1] != prefix:
            c += 1
        if c == len(snapshots):
            raise DecodeError(f"final prefix {prefix} never appears in the trace", chunk_index=len(snapshots) - 1)
        out.append(done_times[c])
    return out


def rtf(trace: DecodeTrace, stream_cfg: StreamConfig | None = None) -> float:
    """Total compute time over the total audio time decoded."""
    if not trace.events:
        raise InvalidInputError("empty trace")
    shift = stream_cfg.frame_shift_ms if stream_cfg is not None else trace.frame_shift_ms
    audio = sum(e.num_frames for e in trace.events) * shift
    return sum(e.compute_ms for e in trace.events) / audio


def stream_decode(
    model: Transducer,
    utt: Utterance,
    beam_cfg: BeamConfig = BeamConfig(),
    stream_cfg: StreamConfig = StreamConfig(),
    endpointer=None,
) -> DecodeResult:
    """Decode one utterance under the virtual clock.

    ``endpointer`` is an :class:`~upl_lab.endpointers.EndpointerSpec`, an
    already-built checker, or ``None`` (never endpoint).
    """
    from .endpointers import AUDIO_EXHAUSTED, EndpointerSpec

    cfg = model.config
    if utt.frames.shape[1] != cfg.feature_dim:
        raise InvalidInputError(f"utterance feature_dim {utt.frames.shape[1]} != model feature_dim {cfg.feature_dim}")
    stream_cfg.validate()
    S = cfg.stride
    chunk = stream_cfg.resolve_chunk(S)
    shift = stream_cfg.frame_shift_ms
    if endpointer is None:
        endpointer = EndpointerSpec()
    checker = endpointer.build(model) if isinstance(endpointer, EndpointerSpec) else endpointer

    cache = PredictorCache(model)
    hyps = [initial_hypothesis(model, cache)]
    state = model.encoder_init_state()
    T_f = utt.num_frames
    n_chunks = -(-T_f // chunk)
    events: list[ChunkEvent] = []
    prev_done = 0.0
    enc_frame = 0
    cause = AUDIO_EXHAUSTED
    close_time = None
    measured = isinstance(stream_cfg.cost_model, Measured)
    for c in range(n_chunks):
        lo, hi = c * chunk, min((c + 1) * chunk, T_f)
        real = utt.frames[lo:hi]
        # a short final chunk is still scheduled on the chunk cadence
        arrive = (c + 1) * chunk * shift
        start = max(arrive, prev_done)
        t0 = time.perf_counter()
        state, rows = encoder_stream_step(model, state, pad_frames(real, S))
        for row in rows:
            hyps = beam_step(model, hyps, row, beam_cfg, enc_frame, cache)
            enc_frame += 1
        best = hyps[0]
        if not math.isfinite(best.log_score):
            raise DecodeError("non-finite hypothesis score", chunk_index=c)
        if measured:
            cost = (time.perf_counter() - t0) * 1000.0
        else:
            cost = stream_cfg.cost_model.cost(hi - lo)
        done = start + cost
        snapshot = strip_eos(best.tokens, cfg.eos_id)
        events.append(ChunkEvent(c, hi - lo, arrive, start, done, cost, snapshot))
        prev_done = done
        last_label = 0.0 if best.last_emit_frame < 0 else (best.last_emit_frame + 1) * S * shift
        view = ChunkView(c, done, hi * shift, last_label, real, best)
        fired = checker.check(view)
        if fired is not None:
            cause = fired
            close_time = done
            break
    if close_time is None:
        close_time = prev_done
    final = strip_eos(hyps[0].tokens, cfg.eos_id)
    emit = emission_times([e.best_tokens for e in events], [e.done_time for e in events], final)
    trace = DecodeTrace(events, final, emit, close_time, cause, T_f * shift, shift)
    return DecodeResult(final, hyps[0], trace)

"""Synthetic voice-command corpus with exact alignments and endpoints."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InvalidInputError, ParseError

FRAME_SHIFT_MS = 10.0


@dataclass(frozen=True)
class CorpusConfig:
    vocab_size: int = 16
    feature_dim: int = 8
    frames_per_token: tuple[int, int] = (4, 8)
    inter_token_silence: tuple[int, int] = (0, 3)
    leading_silence: tuple[int, int] = (2, 10)
    trailing_silence_s: float = 2.0
    noise_std: float = 0.1
    utterance_len: tuple[int, int] = (2, 6)
    num_utterances: int = 100
    seed: int = 0
    frame_shift_ms: float = FRAME_SHIFT_MS

    def __post_init__(self):
        for name in ("frames_per_token", "inter_token_silence", "leading_silence", "utterance_len"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        self.validate()

    def validate(self) -> None:
        if self.vocab_size < 2:
            raise InvalidInputError("vocab_size must be >= 2")
        if self.feature_dim < 1:
            raise InvalidInputError("feature_dim must be >= 1")
        for name in ("frames_per_token", "inter_token_silence", "leading_silence", "utterance_len"):
            lo, hi = getattr(self, name)
            if lo < 0 or hi < lo:
                raise InvalidInputError(f"{name} must be a non-empty, non-negative range, got {(lo, hi)}")
        if self.frames_per_token[0] < 1:
            raise InvalidInputError("frames_per_token lower bound must be >= 1")
        if self.utterance_len[0] < 1:
            raise InvalidInputError("utterance_len lower bound must be >= 1")
        if self.trailing_silence_s < 0 or self.noise_std < 0 or self.num_utterances < 0:
            raise InvalidInputError("trailing_silence_s, noise_std and num_utterances must be >= 0")
        if self.frame_shift_ms <= 0:
            raise InvalidInputError("frame_shift_ms must be > 0")

    @property
    def trailing_frames(self) -> int:
        return math.ceil(self.trailing_silence_s * 1000.0 / self.frame_shift_ms - 1e-9)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "CorpusConfig":
        return cls(**d)


@dataclass
class Utterance:
    id: int
    frames: np.ndarray  # (T_f, feature_dim) float64
    transcript: tuple[int, ...]
    alignments: tuple[tuple[int, int], ...]  # inclusive (start, end) per token
    speech_start_frame: int
    speech_end_frame: int

    @property
    def num_frames(self) -> int:
        return int(self.frames.shape[0])

    @property
    def label_frames(self) -> tuple[int, ...]:
        """Ground-truth emission frame per token: the end of its segment."""
        return tuple(end for _, end in self.alignments)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Utterance):
            return NotImplemented
        return (
            self.id == other.id
            and self.transcript == other.transcript
            and self.alignments == other.alignments
            and self.speech_start_frame == other.speech_start_frame
            and self.speech_end_frame == other.speech_end_frame
            and self.frames.shape == other.frames.shape
            and np.array_equal(self.frames, other.frames)
        )


@dataclass
class Corpus:
    config: CorpusConfig
    utterances: list[Utterance] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.utterances)

    def __iter__(self):
        return iter(self.utterances)

    def __getitem__(self, i):
        return self.utterances[i]


def token_pattern(token: int, feature_dim: int) -> np.ndarray:
    """Unit-norm base pattern of a token; depends only on (token, feature_dim)."""
    rng = np.random.default_rng([0x5EED, token, feature_dim])
    v = rng.standard_normal(feature_dim)
    return v / np.linalg.norm(v)


def _draw(rng: np.random.Generator, bounds: tuple[int, int]) -> int:
    lo, hi = bounds
    return int(rng.integers(lo, hi + 1))


def render_utterance(
    transcript: Sequence[int],
    cfg: CorpusConfig,
    rng: np.random.Generator,
    utt_id: int = 0,
) -> Utterance:
    transcript = tuple(int(t) for t in transcript)
    if not transcript:
        raise InvalidInputError("transcript must be non-empty")
    bad = [t for t in transcript if not 1 <= t <= cfg.vocab_size]
    if bad:
        raise InvalidInputError(f"token ids {bad} outside [1, {cfg.vocab_size}]")

    # segment layout: lengths first, then a single noise draw over the whole utterance
    lead = _draw(rng, cfg.leading_silence)
    segments: list[tuple[int, int]] = []
    pos = lead
    for i, _tok in enumerate(transcript):
        if i > 0:
            pos += _draw(rng, cfg.inter_token_silence)
        k = _draw(rng, cfg.frames_per_token)
        segments.append((pos, pos + k - 1))
        pos += k
    total = pos + cfg.trailing_frames

    frames = np.zeros((total, cfg.feature_dim))
    for tok, (s, e) in zip(transcript, segments):
        frames[s : e + 1] = token_pattern(tok, cfg.feature_dim)
    if cfg.noise_std > 0:
        frames += rng.normal(0.0, cfg.noise_std, size=frames.shape)

    return Utterance(
        id=utt_id,
        frames=frames,
        transcript=transcript,
        alignments=tuple(segments),
        speech_start_frame=segments[0][0],
        speech_end_frame=segments[-1][1],
    )


def synth_corpus(cfg: CorpusConfig) -> Corpus:
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    utts = []
    for i in range(cfg.num_utterances):
        n = _draw(rng, cfg.utterance_len)
        transcript = rng.integers(1, cfg.vocab_size + 1, size=n).tolist()
        utts.append(render_utterance(transcript, cfg, rng, utt_id=i))
    return Corpus(cfg, utts)


def _utt_to_record(u: Utterance) -> dict:
    return {
        "id": u.id,
        "transcript": list(u.transcript),
        "alignments": [list(a) for a in u.alignments],
        "speech_start_frame": u.speech_start_frame,
        "speech_end_frame": u.speech_end_frame,
        "frames": u.frames.tolist(),
    }


def _record_to_utt(rec: dict, feature_dim: int) -> Utterance:
    frames = np.asarray(rec["frames"], dtype=np.float64)
    if frames.ndim != 2 or frames.shape[1] != feature_dim:
        if not (frames.size == 0 and len(rec["frames"]) == 0):
            raise ValueError(f"frames have shape {frames.shape}, expected (*, {feature_dim})")
        frames = frames.reshape(0, feature_dim)
    return Utterance(
        id=int(rec["id"]),
        frames=frames,
        transcript=tuple(int(t) for t in rec["transcript"]),
        alignments=tuple((int(a), int(b)) for a, b in rec["alignments"]),
        speech_start_frame=int(rec["speech_start_frame"]),
        speech_end_frame=int(rec["speech_end_frame"]),
    )


def save_corpus(corpus: Corpus, path) -> None:
    path = Path(path)
    with path.open("w") as f:
        f.write(json.dumps({"config": corpus.config.to_dict(), "count": len(corpus)}) + "\n")
        for u in corpus:
            f.write(json.dumps(_utt_to_record(u)) + "\n")


def load_corpus(path) -> Corpus:
    """Load a corpus file; any malformed or missing record raises :class:`ParseError`."""
    path = Path(path)
    with path.open() as f:
        lines = f.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ParseError("empty corpus file: missing header", record=0)
    try:
        header = json.loads(lines[0])
        cfg = CorpusConfig.from_dict(header["config"])
        count = int(header["count"])
    except (ValueError, KeyError, TypeError, InvalidInputError) as exc:
        raise ParseError(f"bad header: {exc}", record=0) from exc
    utts = []
    for i, line in enumerate(lines[1:], start=1):
        try:
            utts.append(_record_to_utt(json.loads(line), cfg.feature_dim))
        except (ValueError, KeyError, TypeError) as exc:
            raise ParseError(f"bad utterance record: {exc}", record=i) from exc
    if len(utts) != count:
        raise ParseError(f"expected {count} utterance records, found {len(utts)}", record=len(utts) + 1)
    return Corpus(cfg, utts)

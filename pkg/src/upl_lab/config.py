"""Experiment configuration: one JSON document with named sections.

Command-line ``--set section.key=value`` overrides are applied to the raw
document before it is resolved into typed objects; values are parsed as
JSON when possible, otherwise kept as strings.
"""
from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass
from pathlib import Path

from .corpus import CorpusConfig
from .decoder import BeamConfig, StreamConfig, cost_model_from_dict
from .endpointers import E2ESpec, NEPTrainConfig, StaticSpec
from .errors import ConfigurationError, InvalidInputError
from .losses import LossKind, loss_kind_from_dict
from .model import ModelConfig
from .train import TrainConfig

DECODE_SWEEP_PARAMS = ("static_threshold_s", "nep_threshold", "eos_threshold", "ms_per_chunk", "beam_size")
TRAIN_SWEEP_PARAMS = ("stride", "lambda", "b_right")
SWEEP_PARAMS = DECODE_SWEEP_PARAMS + TRAIN_SWEEP_PARAMS

DEFAULTS: dict = {
    "seed": 0,
    "corpus": {"num_utterances": 2000, "trailing_silence_s": 0.3},
    "eval_corpus": {"num_utterances": 200, "trailing_silence_s": 2.0},
    "model": {},
    "train": {"loss": {"kind": "vanilla"}},
    "nep": {},
    "stream": {"frame_shift_ms": 10.0, "chunk_frames": None, "cost_model": {"kind": "fixed", "ms_per_chunk": 0.0}},
    "beam": {"beam_size": 5, "max_symbols_per_frame": 10},
    "endpointer": {"static": {"trailing_silence_s": 0.9}, "neural": None, "e2e": None},
    "sweep": None,
    "paths": {"out_dir": "run"},
}

FILES = {
    "corpus": "corpus.jsonl",
    "eval_corpus": "eval_corpus.jsonl",
    "model": "model.json",
    "nep": "nep.json",
    "train_log": "train_log.json",
    "report_json": "report.json",
    "report_csv": "report.csv",
    "sweep_csv": "sweep.csv",
    "traces": "traces.jsonl",
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def parse_override(item: str) -> tuple[list[str], object]:
    if "=" not in item:
        raise ConfigurationError(f"override {item!r} must look like section.key=value")
    key, raw = item.split("=", 1)
    try:
        value = json.loads(raw)
    except ValueError:
        value = raw
    return key.strip().split("."), value


def apply_overrides(doc: dict, overrides) -> dict:
    doc = copy.deepcopy(doc)
    for item in overrides or ():
        path, value = parse_override(item)
        node = doc
        for part in path[:-1]:
            if node.get(part) is None:
                node[part] = {}
            node = node[part]
            if not isinstance(node, dict):
                raise ConfigurationError(f"cannot override inside non-object at {'.'.join(path)}")
        node[path[-1]] = value
    return doc


@dataclass
class Experiment:
    raw: dict
    seed: int
    corpus: CorpusConfig
    eval_corpus: CorpusConfig
    model: ModelConfig
    loss: LossKind
    train: TrainConfig
    nep: NEPTrainConfig
    stream: StreamConfig
    beam: BeamConfig
    static: StaticSpec | None
    neural: dict | None  # window_frames / threshold; the model comes from a checkpoint
    e2e: E2ESpec | None
    sweep: dict | None
    out_dir: Path

    def path(self, name: str) -> Path:
        override = (self.raw.get("paths") or {}).get(name)
        return Path(override) if override else self.out_dir / FILES[name]


def _construct(cls, d: dict, section: str):
    try:
        return cls(**d)
    except TypeError as exc:
        raise ConfigurationError(f"[{section}] {exc}") from exc
    except InvalidInputError as exc:
        raise ConfigurationError(f"[{section}] {exc}") from exc


def resolve(doc: dict) -> Experiment:
    doc = _merge(DEFAULTS, doc)
    seed = int(doc["seed"])
    cdoc = dict(doc["corpus"])
    cdoc.setdefault("seed", seed)
    corpus = _construct(CorpusConfig, cdoc, "corpus")
    edoc = _merge(cdoc, doc.get("eval_corpus") or {})
    edoc["seed"] = (doc.get("eval_corpus") or {}).get("seed", seed + 1000)
    eval_corpus = _construct(CorpusConfig, edoc, "eval_corpus")

    mdoc = dict(doc["model"])
    mdoc.setdefault("feature_dim", corpus.feature_dim)
    mdoc.setdefault("vocab_size", corpus.vocab_size)
    model = _construct(ModelConfig, mdoc, "model")
    if model.feature_dim != corpus.feature_dim or model.vocab_size != corpus.vocab_size:
        raise ConfigurationError("model feature_dim/vocab_size disagree with the corpus")

    tdoc = dict(doc["train"])
    try:
        loss = loss_kind_from_dict(tdoc.pop("loss", {"kind": "vanilla"}) or {"kind": "vanilla"})
    except InvalidInputError as exc:
        raise ConfigurationError(f"[train.loss] {exc}") from exc
    tdoc.setdefault("seed", seed)
    tdoc.setdefault("ep_training", model.has_eos)
    train = _construct(TrainConfig, tdoc, "train")
    if train.ep_training and not model.has_eos:
        raise ConfigurationError("train.ep_training requires model.has_eos")

    ndoc = dict(doc["nep"] or {})
    ndoc.setdefault("seed", seed)
    nep = _construct(NEPTrainConfig, ndoc, "nep")

    sdoc = dict(doc["stream"])
    try:
        cost = cost_model_from_dict(sdoc.pop("cost_model", {"kind": "fixed"}) or {"kind": "fixed"})
    except InvalidInputError as exc:
        raise ConfigurationError(f"[stream.cost_model] {exc}") from exc
    stream = _construct(StreamConfig, {**sdoc, "cost_model": cost}, "stream")
    try:
        stream.validate()
        stream.resolve_chunk(model.stride)
    except InvalidInputError as exc:
        raise ConfigurationError(f"[stream] {exc}") from exc
    beam = _construct(BeamConfig, doc["beam"], "beam")

    ep = doc["endpointer"] or {}
    # an empty section ({}) enables that endpointer with its defaults; null disables it
    static = _construct(StaticSpec, ep["static"], "endpointer.static") if ep.get("static") is not None else None
    neural = None
    if ep.get("neural") is not None:
        neural = {"window_frames": 5, "threshold": 0.7, **ep["neural"]}
        if not 0 < float(neural["threshold"]) < 1 or int(neural["window_frames"]) < 1:
            raise ConfigurationError("[endpointer.neural] need 0 < threshold < 1 and window_frames >= 1")
    e2e = None
    if ep.get("e2e") is not None:
        ed = dict(ep["e2e"])
        thr = ed.get("eos_logprob_threshold", math.log(0.5))
        e2e = E2ESpec(float(thr))
        if not model.has_eos:
            raise ConfigurationError("endpointer.e2e requires model.has_eos")

    sweep = doc.get("sweep")
    if sweep is not None:
        if sweep.get("param") not in SWEEP_PARAMS:
            raise ConfigurationError(f"sweep.param must be one of {', '.join(SWEEP_PARAMS)}; got {sweep.get('param')!r}")
        if not isinstance(sweep.get("values"), list) or not sweep["values"]:
            raise ConfigurationError("sweep.values must be a non-empty list")

    out_dir = Path((doc.get("paths") or {}).get("out_dir") or "run")
    return Experiment(doc, seed, corpus, eval_corpus, model, loss, train, nep, stream, beam,
                      static, neural, e2e, sweep, out_dir)


def load_config(path: str | Path | None, overrides=(), seed: int | None = None, out: str | None = None) -> Experiment:
    doc: dict = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigurationError(f"config file {p} does not exist")
        try:
            doc = json.loads(p.read_text())
        except ValueError as exc:
            raise ConfigurationError(f"config file {p} is not valid JSON: {exc}") from exc
    doc = apply_overrides(doc, overrides)
    if seed is not None:
        doc["seed"] = seed
    if out is not None:
        doc.setdefault("paths", {})
        doc["paths"] = {**(doc.get("paths") or {}), "out_dir": out}
    return resolve(doc)

"""Experiment pipeline shared by the CLI and the acceptance suite."""
from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from . import nn
from .config import DECODE_SWEEP_PARAMS, Experiment
from .corpus import Corpus, load_corpus, save_corpus, synth_corpus
from .decoder import BeamConfig, Fixed, StreamConfig, rtf, stream_decode
from .endpointers import E2ESpec, EndpointerSpec, NeuralSpec, StaticSpec, load_nep, nep_train, save_nep
from .errors import ConfigurationError, InvalidInputError
from .losses import AlignmentRestricted, FastEmit, LossKind
from .metrics import RunReport, aggregate, emit_report, emit_sweep, latency_from_trace, sweep_row, wer
from .model import ModelConfig, Transducer
from .train import TrainConfig, train

log = logging.getLogger(__name__)


def _decode_one(args):
    model, utt, beam, stream, spec = args
    res = stream_decode(model, utt, beam, stream, spec)
    rec = latency_from_trace(res.trace, utt, stream)
    w = wer(utt.transcript, res.tokens) if utt.transcript else None
    return utt.id, rec, w, rtf(res.trace, stream), res.trace


def benchmark(
    model: Transducer,
    corpus: Corpus | Sequence,
    beam: BeamConfig,
    stream: StreamConfig,
    spec: EndpointerSpec,
    workers: int = 1,
    config: dict | None = None,
    keep_traces: bool = False,
):
    """Decode every utterance; returns (report, traces by utterance id or None)."""
    jobs = [(model, u, beam, stream, spec) for u in corpus]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            rows = list(ex.map(_decode_one, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        rows = [_decode_one(j) for j in jobs]
    rows.sort(key=lambda r: r[0])
    report = aggregate([r[1] for r in rows], [r[2] for r in rows], [r[3] for r in rows], config)
    traces = {r[0]: r[4] for r in rows} if keep_traces else None
    return report, traces


def load_transducer(path) -> Transducer:
    cfg, params, _ = nn.load_checkpoint(path, "transducer")
    return Transducer(ModelConfig.from_dict(cfg), params)


def save_transducer(model: Transducer, path, extra: dict | None = None) -> None:
    nn.save_checkpoint(path, "transducer", model.config.to_dict(), model.params, extra)


def endpointer_spec(exp: Experiment, nep_model=None, static_s=None, nep_threshold=None, eos_threshold=None) -> EndpointerSpec:
    static = exp.static
    if static_s is not None:
        static = StaticSpec(float(static_s))
    neural = None
    if exp.neural is not None:
        if nep_model is None:
            raise ConfigurationError("endpointer.neural is configured but no neural endpointer checkpoint was loaded")
        thr = float(exp.neural["threshold"] if nep_threshold is None else nep_threshold)
        neural = NeuralSpec(nep_model, int(exp.neural["window_frames"]), thr)
    e2e = exp.e2e
    if eos_threshold is not None:
        if e2e is None:
            raise ConfigurationError("eos_threshold sweep needs endpointer.e2e configured")
        e2e = E2ESpec(float(eos_threshold))
    return EndpointerSpec(static, neural, e2e)


def echo(exp: Experiment, **extra) -> dict:
    # output locations don't affect results; leaving them out keeps reruns into
    # a different directory byte-identical
    raw = {k: v for k, v in exp.raw.items() if k != "paths"}
    return {"experiment": raw, "seed": exp.seed, **extra}


# --- commands ---------------------------------------------------------------------


def gen_corpus(exp: Experiment) -> tuple[Path, Path]:
    exp.out_dir.mkdir(parents=True, exist_ok=True)
    train_path, eval_path = exp.path("corpus"), exp.path("eval_corpus")
    log.info("generating %d training utterances", exp.corpus.num_utterances)
    save_corpus(synth_corpus(exp.corpus), train_path)
    log.info("generating %d evaluation utterances", exp.eval_corpus.num_utterances)
    save_corpus(synth_corpus(exp.eval_corpus), eval_path)
    return train_path, eval_path


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise ConfigurationError(f"{what} {path} not found; run the earlier pipeline step first")
    return path


def load_checked_corpus(path: Path, model_cfg: ModelConfig, what: str) -> Corpus:
    corpus = load_corpus(_require(path, what))
    if corpus.config.feature_dim != model_cfg.feature_dim or corpus.config.vocab_size != model_cfg.vocab_size:
        raise ConfigurationError(
            f"{what} {path} has feature_dim={corpus.config.feature_dim}, vocab_size={corpus.config.vocab_size}; "
            f"model expects {model_cfg.feature_dim}, {model_cfg.vocab_size}"
        )
    return corpus


def train_models(exp: Experiment, model_cfg: ModelConfig | None = None, loss: LossKind | None = None,
                 model_path: Path | None = None, corpus: Corpus | None = None, with_nep: bool = True):
    model_cfg = model_cfg or exp.model
    loss = loss or exp.loss
    corpus = corpus or load_checked_corpus(exp.path("corpus"), model_cfg, "training corpus")
    log.info("training transducer (%s, stride %d)", loss.name, model_cfg.stride)
    model, history = train(corpus, model_cfg, loss, exp.train)
    resolved = {"model": model_cfg.to_dict(), "loss": loss.to_dict(), "train": exp.train.to_dict()}
    model_path = model_path or exp.path("model")
    model_path.parent.mkdir(parents=True, exist_ok=True)
    save_transducer(model, model_path, echo(exp, resolved=resolved))
    log_doc = {"config": echo(exp, resolved=resolved), "transducer": history}
    if with_nep and exp.neural is not None:
        log.info("training neural endpointer")
        nep, nep_hist = nep_train(corpus, exp.nep)
        save_nep(nep, exp.path("nep"), echo(exp, nep=exp.nep.to_dict()))
        log_doc["neural_endpointer"] = nep_hist
    if model_path == exp.path("model"):
        exp.path("train_log").write_text(json.dumps(log_doc, sort_keys=True, indent=1) + "\n")
    return model, history


def _load_nep_if_needed(exp: Experiment):
    if exp.neural is None:
        return None
    return load_nep(_require(exp.path("nep"), "neural endpointer checkpoint"))


def bench(exp: Experiment, workers: int = 1, trace: bool = False) -> RunReport:
    model = load_transducer(_require(exp.path("model"), "model checkpoint"))
    corpus = load_checked_corpus(exp.path("eval_corpus"), model.config, "evaluation corpus")
    spec = endpointer_spec(exp, _load_nep_if_needed(exp))
    report, traces = benchmark(model, corpus, exp.beam, exp.stream, spec, workers, echo(exp), keep_traces=trace)
    emit_report(report, "json", exp.path("report_json"))
    emit_report(report, "csv", exp.path("report_csv"))
    if trace:
        with exp.path("traces").open("w") as f:
            f.write(json.dumps({"config": echo(exp)}, sort_keys=True) + "\n")
            for uid in sorted(traces):
                f.write("\n".join(traces[uid].to_lines(uid)) + "\n")
    return report


def _sweep_variant(exp: Experiment, param: str, value):
    """(model_cfg, loss, stream, beam, endpointer overrides) for one sweep value."""
    model_cfg, loss, stream, beam = exp.model, exp.loss, exp.stream, exp.beam
    ep = {}
    if param == "static_threshold_s":
        ep["static_s"] = value
    elif param == "nep_threshold":
        ep["nep_threshold"] = value
    elif param == "eos_threshold":
        ep["eos_threshold"] = value
    elif param == "ms_per_chunk":
        stream = replace(stream, cost_model=Fixed(float(value)))
    elif param == "beam_size":
        beam = replace(beam, beam_size=int(value))
    elif param == "stride":
        model_cfg = replace(model_cfg, stride_schedule=(int(value),))
        if stream.chunk_frames is not None and stream.chunk_frames % int(value):
            stream = replace(stream, chunk_frames=None)
    elif param == "lambda":
        loss = FastEmit(float(value))
    elif param == "b_right":
        b_left = loss.b_left if isinstance(loss, AlignmentRestricted) else 0
        loss = AlignmentRestricted(b_left, int(value))
    return model_cfg, loss, stream, beam, ep


def sweep(exp: Experiment, workers: int = 1) -> list[dict]:
    if exp.sweep is None:
        raise ConfigurationError("config has no sweep section")
    param, values = exp.sweep["param"], exp.sweep["values"]
    nep = _load_nep_if_needed(exp)
    base_model = None
    if param in DECODE_SWEEP_PARAMS:
        base_model = load_transducer(_require(exp.path("model"), "model checkpoint"))
    rows = []
    train_corpus = None
    for value in values:
        model_cfg, loss, stream, beam, ep = _sweep_variant(exp, param, value)
        if base_model is not None:
            model = base_model
        else:
            if train_corpus is None:
                train_corpus = load_checked_corpus(exp.path("corpus"), model_cfg, "training corpus")
            path = exp.out_dir / "sweep_models" / f"{param}_{value}.json"
            model, _ = train_models(exp, model_cfg, loss, path, train_corpus, with_nep=False)
        corpus = load_checked_corpus(exp.path("eval_corpus"), model.config, "evaluation corpus")
        try:
            spec = endpointer_spec(exp, nep, **ep)
        except InvalidInputError as exc:
            raise ConfigurationError(f"sweep value {value!r}: {exc}") from exc
        log.info("sweep %s=%s", param, value)
        report, _ = benchmark(model, corpus, beam, stream, spec, workers, echo(exp, sweep_value=value))
        rows.append(sweep_row(param, value, report))
    emit_sweep(rows, exp.path("sweep_csv"), echo(exp))
    return rows

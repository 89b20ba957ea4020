"""Acceptance criteria, one test per criterion.

Each test prints a single PASS/FAIL line (also collected in the terminal
summary). Training-based criteria share session-scoped models built with
the package defaults; the whole module takes several minutes on one core.
"""
import json
import os
import shutil
import statistics
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from conftest import record_criterion
from upl_lab import kernels
from upl_lab.cli import main as cli_main
from upl_lab.config import load_config
from upl_lab.corpus import synth_corpus
from upl_lab.decoder import DecodeTrace, Fixed
from upl_lab.endpointers import E2ESpec, EndpointerSpec, NeuralSpec, StaticSpec, nep_train
from upl_lab.errors import DegenerateAlignmentError
from upl_lab.losses import (
    AlignmentRestricted,
    FastEmit,
    Vanilla,
    alignment_band,
    ar_rnnt_loss,
    brute_force_loss,
    fastemit_loss,
    rnnt_loss,
)
from upl_lab.metrics import latency_from_trace
from upl_lab.model import ModelConfig, Transducer, backprop, log_softmax, logit_lattice, param_layout
from upl_lab.pipeline import benchmark
from upl_lab.train import train

REPORTS: list = []  # every benchmark run in this module, for the additivity criterion


def _bench(model, corpus, spec, stream=None, beam=None):
    exp = _exp()
    report, traces = benchmark(model, corpus, beam or exp.beam, stream or exp.stream, spec, keep_traces=True)
    REPORTS.append(report)
    return report, traces


def _p50(report, name):
    return report.aggregates[f"p50_{name}"]


_EXP = None


def _exp():
    global _EXP
    if _EXP is None:
        _EXP = load_config(None)
    return _EXP


# --- shared fixtures ----------------------------------------------------------------------


@pytest.fixture(scope="module")
def train_corpus():
    return synth_corpus(_exp().corpus)


@pytest.fixture(scope="module")
def eval_corpus():
    return synth_corpus(_exp().eval_corpus)


_MODELS: dict = {}


def _trained(key, corpus, model_cfg, loss, ep_training=False):
    if key not in _MODELS:
        exp = _exp()
        t = time.perf_counter()
        model, hist = train(corpus, model_cfg, loss, replace(exp.train, ep_training=ep_training))
        print(f"[train {key}: {time.perf_counter() - t:.0f}s, final loss {hist[-1]['mean_loss']:.3f}]")
        _MODELS[key] = model
    return _MODELS[key]


@pytest.fixture(scope="module")
def vanilla_model(train_corpus):
    return _trained("vanilla", train_corpus, _exp().model, Vanilla())


@pytest.fixture(scope="module")
def ar_model(train_corpus):
    return _trained("ar", train_corpus, _exp().model, AlignmentRestricted(b_left=0, b_right=6))


@pytest.fixture(scope="module")
def fastemit_model(train_corpus):
    return _trained("fastemit", train_corpus, _exp().model, FastEmit(0.004))


@pytest.fixture(scope="module")
def eos_model(train_corpus):
    cfg = replace(_exp().model, has_eos=True)
    return _trained("ar+eos", train_corpus, cfg, AlignmentRestricted(b_left=0, b_right=6), ep_training=True)


@pytest.fixture(scope="module")
def nep(train_corpus):
    model, _ = nep_train(train_corpus, _exp().nep)
    return model


# --- 1: lattice-loss oracle equivalence -----------------------------------------------------


def _instance(rng):
    T = int(rng.integers(1, 5))
    U = int(rng.integers(0, min(3, T) + 1))
    K = int(rng.integers(2, 6))
    return rng.normal(scale=2.0, size=(T, U + 1, K)), rng.integers(1, K, size=U).tolist()


def test_c1_lattice_oracle_equivalence():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst_loss = worst_ar = worst_cut = 0.0
    n_ar = 0
    for _ in range(100):
        logits, target = _instance(rng)
        T = logits.shape[0]
        worst_loss = max(worst_loss, abs(rnnt_loss(logits, target).value - brute_force_loss(logits, target)))
        frames = sorted(rng.integers(0, T, size=len(target)).tolist())
        bl, br = int(rng.integers(0, 3)), int(rng.integers(0, 3))
        try:
            ar = ar_rnnt_loss(logits, target, frames, bl, br, stride=1).value
        except DegenerateAlignmentError:
            ar = None
        if ar is not None:
            worst_ar = max(worst_ar, abs(ar - brute_force_loss(logits, target, alignment_band(frames, 1, bl, br, T))))
            n_ar += 1
        lp = log_softmax(logits)
        phi = lp[:, :, 0]
        sig = np.stack([lp[:, u, target[u]] for u in range(len(target))], axis=1) if target else np.zeros((T, 0))
        alpha, beta, ll = kernels.forward_backward(phi, sig)
        cuts = [np.logaddexp.reduce(alpha[t] + phi[t] + beta[t + 1]) for t in range(T - 1)] + [alpha[0, 0] + beta[0, 0]]
        worst_cut = max(worst_cut, max(abs(c - ll) for c in cuts))
    elapsed = time.perf_counter() - t0
    ok = worst_loss <= 1e-9 and worst_ar <= 1e-9 and worst_cut <= 1e-9 and n_ar >= 50 and elapsed < 5.0
    record_criterion(
        "C1 lattice-loss oracle", ok,
        f"max |rnnt-bf|={worst_loss:.1e}, max |ar-bf|={worst_ar:.1e} ({n_ar} banded), max cut err={worst_cut:.1e}, {elapsed:.2f}s",
    )
    assert ok


# --- 2: gradient correctness -------------------------------------------------------------------


def _rel(a, b):
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12))


def _fd(fn, x, eps=1e-4):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        up, dn = x.copy(), x.copy()
        up[idx] += eps
        dn[idx] -= eps
        g[idx] = (fn(up) - fn(dn)) / (2 * eps)
    return g


def test_c2_gradient_correctness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    worst_v = worst_ar = worst_model = 0.0
    n = 0
    while n < 20:
        logits, target = _instance(rng)
        T = logits.shape[0]
        frames = sorted(rng.integers(0, T, size=len(target)).tolist())
        try:
            ar_g = ar_rnnt_loss(logits, target, frames, 0, 1, stride=1).grad
        except DegenerateAlignmentError:
            continue
        worst_v = max(worst_v, _rel(rnnt_loss(logits, target).grad, _fd(lambda z: rnnt_loss(z, target).value, logits)))
        worst_ar = max(worst_ar, _rel(ar_g, _fd(lambda z: ar_rnnt_loss(z, target, frames, 0, 1, stride=1).value, logits)))
        n += 1
    # full model: loss through the network, directional finite differences
    for i in range(20):
        r = np.random.default_rng(100 + i)
        cfg = ModelConfig(feature_dim=3, vocab_size=4, encoder_layers=int(r.integers(1, 3)), encoder_hidden=int(r.integers(2, 9)),
                          stride_schedule=(int(r.integers(1, 3)),), predictor_embed=4, predictor_hidden=int(r.integers(2, 9)),
                          joiner_hidden=int(r.integers(2, 9)))
        m = Transducer(cfg, r.uniform(-0.5, 0.5, param_layout(cfg).size))
        frames = r.normal(size=(int(r.integers(4, 13)), 3))
        target = r.integers(1, 5, size=int(r.integers(0, 3))).tolist()
        loss_fn = AlignmentRestricted(0, 1) if i % 2 else Vanilla()

        # ar: every label must be emitted within the first two encoder frames (always feasible)
        def loss_of(lat):
            if isinstance(loss_fn, AlignmentRestricted):
                return ar_rnnt_loss(lat, target, [0] * len(target), 0, 1, cfg.stride)
            return rnnt_loss(lat, target)

        def value(params):
            return loss_of(logit_lattice(Transducer(cfg, params), frames, target)).value

        res = loss_of(logit_lattice(m, frames, target))
        grad = backprop(m, frames, target, res.grad)
        for _ in range(2):
            d = r.normal(size=m.params.size)
            d /= np.linalg.norm(d)
            fd = (value(m.params + 1e-4 * d) - value(m.params - 1e-4 * d)) / 2e-4
            an = float(grad @ d)
            worst_model = max(worst_model, abs(fd - an) / max(abs(fd), abs(an), 1e-12))
    elapsed = time.perf_counter() - t0
    ok = max(worst_v, worst_ar, worst_model) <= 1e-4 and elapsed < 30.0
    record_criterion("C2 gradient correctness", ok,
                     f"rel err vanilla={worst_v:.1e}, ar={worst_ar:.1e}, model={worst_model:.1e} (20 each), {elapsed:.1f}s")
    assert ok


# --- 3: degeneracy identities --------------------------------------------------------------------


def test_c3_degeneracy_identities():
    rng = np.random.default_rng(3)
    worst_fe = worst_ar = worst_scale = 0.0
    for _ in range(100):
        logits, target = _instance(rng)
        T = logits.shape[0]
        v = rnnt_loss(logits, target)
        fe0 = fastemit_loss(logits, target, 0.0)
        worst_fe = max(worst_fe, abs(fe0.value - v.value), float(np.max(np.abs(fe0.grad - v.grad))))
        frames = sorted(rng.integers(0, T, size=len(target)).tolist())
        ar = ar_rnnt_loss(logits, target, frames, T, T, stride=1)
        worst_ar = max(worst_ar, abs(ar.value - v.value), float(np.max(np.abs(ar.grad - v.grad))))
        lam = float(rng.uniform(0, 2))
        fe = fastemit_loss(logits, target, lam)
        if target:
            worst_scale = max(worst_scale, float(np.max(np.abs(fe.label_grad - (1 + lam) * v.label_grad))))
        worst_scale = max(worst_scale, float(np.max(np.abs(fe.blank_grad - v.blank_grad))), abs(fe.value - v.value))
    ok = worst_fe <= 1e-12 and worst_ar <= 1e-12 and worst_scale <= 1e-15
    record_criterion("C3 degeneracy identities", ok,
                     f"|FastEmit(0)-V|={worst_fe:.1e}, |Ar(b=T')-V|={worst_ar:.1e}, sigma-scale err={worst_scale:.1e}")
    assert ok


# --- 4: loss-design ordering -------------------------------------------------------------------------


@pytest.mark.slow
def test_c4_alignment_restricted_lowers_latency(vanilla_model, ar_model, eval_corpus):
    spec = EndpointerSpec(static=StaticSpec(0.9))
    rv, _ = _bench(vanilla_model, eval_corpus, spec)
    ra, _ = _bench(ar_model, eval_corpus, spec)
    ftd_v, ftd_a = _p50(rv, "first_token_delay_ms"), _p50(ra, "first_token_delay_ms")
    upl_v, upl_a = _p50(rv, "upl_ms"), _p50(ra, "upl_ms")
    ok = ftd_a < ftd_v and upl_a < upl_v
    record_criterion(
        "C4 ArRNN-T vs RNN-T latency", ok,
        f"P50 first-token delay Ar={ftd_a} vs V={ftd_v} ms; P50 UPL Ar={upl_a} vs V={upl_v} ms; "
        f"WER Ar={ra.aggregates['wer']:.3f} V={rv.aggregates['wer']:.3f}",
    )
    assert ok


@pytest.mark.slow
def test_fastemit_latency_report(vanilla_model, fastemit_model, eval_corpus):
    # no ordering is required of FastEmit; report where it lands and check it still trains
    spec = EndpointerSpec(static=StaticSpec(0.9))
    rv, _ = _bench(vanilla_model, eval_corpus, spec)
    rf, _ = _bench(fastemit_model, eval_corpus, spec)
    print(f"info FastEmit(0.004) vs RNN-T: P50 first-token delay {_p50(rf, 'first_token_delay_ms')} vs "
          f"{_p50(rv, 'first_token_delay_ms')} ms; P50 UPL {_p50(rf, 'upl_ms')} vs {_p50(rv, 'upl_ms')} ms; "
          f"WER {rf.aggregates['wer']:.3f} vs {rv.aggregates['wer']:.3f}")
    assert rf.aggregates["wer"] < 0.1


# --- 5: static endpointer sweep --------------------------------------------------------------------------


@pytest.mark.slow
def test_c5_static_sweep(vanilla_model):
    # evaluation speech with long pauses, so short thresholds cut utterances early
    cfg = replace(_exp().eval_corpus, inter_token_silence=(3, 40))
    corpus = synth_corpus(cfg)
    rows = []
    for n in (1.5, 1.2, 0.9, 0.6, 0.3):
        r, _ = _bench(vanilla_model, corpus, EndpointerSpec(static=StaticSpec(n)))
        rows.append((n, _p50(r, "upl_ms"), r.aggregates["deletions"]))
    upl = [u for _, u, _ in rows]
    dels = [d for _, _, d in rows]
    ok = (all(a >= b for a, b in zip(upl, upl[1:])) and all(a <= b for a, b in zip(dels, dels[1:]))
          and dels[-1] > dels[0])
    record_criterion("C5 StaticEP sweep", ok,
                     "N/P50 UPL/deletions: " + "; ".join(f"{n}s/{u}ms/{d}" for n, u, d in rows))
    assert ok


# --- 6: endpointer composition ----------------------------------------------------------------------------


@pytest.mark.slow
def test_c6_endpointer_composition(eos_model, nep, eval_corpus):
    static = StaticSpec(0.9)
    neural = NeuralSpec(nep)
    specs = {
        "S": EndpointerSpec(static=static),
        "SN": EndpointerSpec(static=static, neural=neural),
        "SNE": EndpointerSpec(static=static, neural=neural, e2e=E2ESpec()),
    }
    reps = {k: _bench(eos_model, eval_corpus, s)[0] for k, s in specs.items()}
    upl = {k: _p50(r, "upl_ms") for k, r in reps.items()}
    lag = {k: _p50(r, "endpointer_lag_ms") for k, r in reps.items()}
    w = {k: r.aggregates["wer"] for k, r in reps.items()}
    # dominance also holds per utterance
    per_utt = all(
        c.upl_ms <= b.upl_ms <= a.upl_ms
        for a, b, c in zip(reps["S"].records, reps["SN"].records, reps["SNE"].records)
    )
    ok = upl["SNE"] <= upl["SN"] <= upl["S"] and per_utt and lag["SNE"] < lag["S"] and w["SNE"] - w["S"] <= 0.02
    record_criterion(
        "C6 endpointer composition", ok,
        "P50 UPL " + ", ".join(f"{k}={v}" for k, v in upl.items())
        + "; P50 EP lag " + ", ".join(f"{k}={v}" for k, v in lag.items())
        + "; WER " + ", ".join(f"{k}={v:.3f}" for k, v in w.items())
        + f"; causes SNE={reps['SNE'].aggregates['causes']}",
    )
    assert ok


# --- 7: RTF sensitivity ---------------------------------------------------------------------------------------


@pytest.mark.slow
def test_c7_rtf_sensitivity(vanilla_model, eval_corpus):
    exp = _exp()
    chunk = exp.stream.resolve_chunk(vanilla_model.config.stride)
    chunk_ms = chunk * exp.stream.frame_shift_ms
    spec = EndpointerSpec(static=StaticSpec(0.9))
    runs = {}
    for r in (0.5, 1.5):
        stream = replace(exp.stream, cost_model=Fixed(r * chunk_ms))
        runs[r] = _bench(vanilla_model, eval_corpus, spec, stream=stream)
    (fast, fast_tr), (slow, slow_tr) = runs[0.5], runs[1.5]
    diff = _p50(slow, "decoder_catchup_ms") - _p50(fast, "decoder_catchup_ms")
    shift = exp.stream.frame_shift_ms
    speech = statistics.median_low([(u.speech_end_frame + 1 - u.speech_start_frame) * shift for u in eval_corpus])
    # backlog law on every slow trace: chunk c cannot finish before r * its arrival minus one chunk's cost
    cost = 1.5 * chunk_ms
    law = all(
        e.done_time >= 1.5 * e.arrive_time - cost - 1e-9 and e.done_time <= e.arrive_time + (e.chunk_index + 1) * cost
        for tr in slow_tr.values() for e in tr.events
    )
    bounded_fast = all(e.done_time - e.arrive_time <= 0.5 * chunk_ms + 1e-9 for tr in fast_tr.values() for e in tr.events)
    ok = diff >= 0.4 * speech and law and bounded_fast
    record_criterion(
        "C7 RTF sensitivity", ok,
        f"P50 catchup RTF1.5={_p50(slow, 'decoder_catchup_ms')} vs RTF0.5={_p50(fast, 'decoder_catchup_ms')} ms "
        f"(diff {diff} >= 0.4*{speech} = {0.4 * speech}); backlog law holds: {law and bounded_fast}",
    )
    assert ok


# --- 9: determinism --------------------------------------------------------------------------------------------


SMALL = {
    "seed": 11,
    "corpus": {"num_utterances": 40},
    "eval_corpus": {"num_utterances": 12},
    "model": {"encoder_layers": 1, "encoder_hidden": 12, "predictor_embed": 8, "predictor_hidden": 12, "joiner_hidden": 12},
    "train": {"epochs": 3},
    "stream": {"cost_model": {"kind": "linear", "base_ms": 4.0, "ms_per_frame": 6.0}},
    "endpointer": {"static": {"trailing_silence_s": 0.6}, "neural": {"threshold": 0.7}},
}


def _pipeline(workdir: Path) -> dict:
    workdir.mkdir(parents=True)
    cfg = workdir / "exp.json"
    cfg.write_text(json.dumps(SMALL))
    cwd = os.getcwd()
    os.chdir(workdir)
    try:
        for cmd in (["gen-corpus"], ["train"], ["bench", "--trace", "--workers", "2"]):
            assert cli_main([*cmd, "--config", "exp.json", "--out", "run", "--log-level", "ERROR"]) == 0
        assert cli_main(["report", "run", "--out", "cmp", "--log-level", "ERROR"]) == 0
        backup = workdir / "report.json.captured"
        shutil.copy(workdir / "run" / "report.json", backup)
        # the REPORTS registry also covers this run
        from upl_lab.metrics import load_report

        REPORTS.append(load_report(backup))
    finally:
        os.chdir(cwd)
    names = ["run/report.json", "run/report.csv", "run/report.csv.config.json", "run/traces.jsonl",
             "run/model.json", "run/nep.json", "run/corpus.jsonl", "cmp/comparison.csv"]
    return {n: (workdir / n).read_bytes() for n in names}


def test_c9_pipeline_determinism(tmp_path):
    a = _pipeline(tmp_path / "first")
    b = _pipeline(tmp_path / "second")
    differing = [n for n in a if a[n] != b[n]]
    ok = not differing
    record_criterion("C9 determinism", ok,
                     f"{len(a)} output files compared byte-for-byte across two runs; differing: {differing or 'none'}")
    assert ok


# --- 8: metric unit fidelity (last, so it sees every benchmark above) --------------------------------------------


def test_c8_metric_unit_fidelity():
    from types import SimpleNamespace

    utt = SimpleNamespace(id=0, speech_start_frame=50, speech_end_frame=199)
    tr = DecodeTrace([], (1, 2, 3), [700.0, 1500.0, 2400.0], 3000.0, "Static", 5000.0, 10.0)
    rec = latency_from_trace(tr, utt)
    example = (rec.first_token_delay_ms, rec.decoder_catchup_ms, rec.endpointer_lag_ms, rec.upl_ms) == (200.0, 400.0, 600.0, 1000.0)
    n_records = bad = 0
    for report in REPORTS:
        for r in report.records:
            n_records += 1
            if r.decoder_catchup_ms is not None and r.upl_ms != r.decoder_catchup_ms + r.endpointer_lag_ms:
                bad += 1
            if r.decoder_catchup_ms is None and r.upl_ms != r.endpointer_lag_ms:
                bad += 1
    ok = example and bad == 0 and n_records > 0
    record_criterion("C8 metric unit fidelity", ok,
                     f"timeline example 200/400/600/1000 ms: {example}; additivity violations {bad}/{n_records} records "
                     f"over {len(REPORTS)} benchmark runs")
    assert ok

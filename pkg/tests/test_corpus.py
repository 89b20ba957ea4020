import json
import math

import numpy as np
import pytest

from upl_lab.corpus import (
    Corpus,
    CorpusConfig,
    load_corpus,
    render_utterance,
    save_corpus,
    synth_corpus,
    token_pattern,
)
from upl_lab.errors import InvalidInputError, ParseError


def _fixed_cfg(**kw):
    base = dict(frames_per_token=(5, 5), leading_silence=(3, 3), inter_token_silence=(0, 0), trailing_silence_s=2.0)
    base.update(kw)
    return CorpusConfig(**base)


def test_single_token_frame_arithmetic():
    u = render_utterance([3], _fixed_cfg(), np.random.default_rng(0))
    assert u.num_frames == 3 + 5 + 200
    assert u.speech_start_frame == 3
    assert u.speech_end_frame == 7
    assert u.alignments == ((3, 7),)
    assert u.label_frames == (7,)


def test_zero_noise_repeated_token_segments_identical():
    cfg = _fixed_cfg(noise_std=0.0, inter_token_silence=(2, 2))
    u = render_utterance([4, 4], cfg, np.random.default_rng(0))
    (s0, e0), (s1, e1) = u.alignments
    np.testing.assert_array_equal(u.frames[s0 : e0 + 1], u.frames[s1 : e1 + 1])
    # silence frames are exactly zero without noise
    assert not u.frames[: s0].any() and not u.frames[e1 + 1 :].any()


def test_render_seeded_determinism():
    cfg = CorpusConfig()
    a = render_utterance([1, 2, 3], cfg, np.random.default_rng(9))
    b = render_utterance([1, 2, 3], cfg, np.random.default_rng(9))
    assert a == b


@pytest.mark.parametrize("transcript", [[], [0], [17], [2, -1]])
def test_render_rejects_bad_transcripts(transcript):
    with pytest.raises(InvalidInputError):
        render_utterance(transcript, CorpusConfig(), np.random.default_rng(0))


@pytest.mark.parametrize(
    "kw",
    [
        dict(vocab_size=1),
        dict(frames_per_token=(3, 2)),
        dict(inter_token_silence=(-1, 2)),
        dict(utterance_len=(0, 3)),
        dict(frames_per_token=(0, 2)),
        dict(noise_std=-0.1),
    ],
)
def test_config_validation(kw):
    with pytest.raises(InvalidInputError):
        CorpusConfig(**kw)


def test_token_patterns_unit_norm_and_corpus_independent():
    for t in range(1, 17):
        p = token_pattern(t, 8)
        assert math.isclose(np.linalg.norm(p), 1.0, rel_tol=1e-12)
        np.testing.assert_array_equal(p, token_pattern(t, 8))
    assert not np.allclose(token_pattern(1, 8), token_pattern(2, 8))


def test_empty_corpus():
    c = synth_corpus(CorpusConfig(num_utterances=0))
    assert len(c) == 0


def test_synth_determinism():
    a = synth_corpus(CorpusConfig(num_utterances=20, seed=7))
    b = synth_corpus(CorpusConfig(num_utterances=20, seed=7))
    assert a.utterances == b.utterances
    c = synth_corpus(CorpusConfig(num_utterances=20, seed=8))
    assert a.utterances != c.utterances


def test_corpus_scan_invariants():
    cfg = CorpusConfig(num_utterances=1000, seed=11)
    corpus = synth_corpus(cfg)
    trailing = math.ceil(cfg.trailing_silence_s * 1000 / cfg.frame_shift_ms)
    assert [u.id for u in corpus] == list(range(1000))
    for u in corpus:
        assert 2 <= len(u.transcript) <= 6
        assert all(1 <= t <= cfg.vocab_size for t in u.transcript)
        assert u.speech_start_frame == u.alignments[0][0]
        assert u.speech_end_frame == u.alignments[-1][1]
        assert 0 <= u.speech_start_frame <= u.speech_end_frame < u.num_frames
        assert u.num_frames - 1 - u.speech_end_frame >= trailing
        # token segments are ordered, non-overlapping, and tile [0, T_f) with the silence gaps
        covered = np.zeros(u.num_frames, dtype=int)
        prev_end = -1
        for s, e in u.alignments:
            assert prev_end < s <= e
            lo, hi = cfg.inter_token_silence
            if prev_end >= 0:
                assert lo <= s - prev_end - 1 <= hi
            assert cfg.frames_per_token[0] <= e - s + 1 <= cfg.frames_per_token[1]
            covered[s : e + 1] += 1
            prev_end = e
        assert covered.max() == 1
        assert cfg.leading_silence[0] <= u.speech_start_frame <= cfg.leading_silence[1]


def test_silence_frames_are_noise_only():
    cfg = CorpusConfig(num_utterances=5, seed=2, noise_std=0.0)
    for u in synth_corpus(cfg):
        mask = np.ones(u.num_frames, bool)
        for s, e in u.alignments:
            mask[s : e + 1] = False
        assert not u.frames[mask].any()


def test_roundtrip(tmp_path, small_corpus):
    path = tmp_path / "c.jsonl"
    save_corpus(small_corpus, path)
    loaded = load_corpus(path)
    assert loaded.config == small_corpus.config
    assert loaded.utterances == small_corpus.utterances
    header = json.loads(path.read_text().splitlines()[0])
    assert header["config"]["seed"] == small_corpus.config.seed


def test_empty_roundtrip(tmp_path):
    path = tmp_path / "e.jsonl"
    save_corpus(Corpus(CorpusConfig(num_utterances=0), []), path)
    assert len(load_corpus(path)) == 0


def test_truncated_file_is_parse_error(tmp_path, small_corpus):
    path = tmp_path / "c.jsonl"
    save_corpus(small_corpus, path)
    text = path.read_text()
    # drop the last two records entirely
    lines = text.splitlines()
    path.write_text("\n".join(lines[:-2]) + "\n")
    with pytest.raises(ParseError):
        load_corpus(path)
    # cut mid-record
    path.write_text(text[: len(text) // 2])
    with pytest.raises(ParseError) as exc:
        load_corpus(path)
    assert exc.value.record >= 1


def test_malformed_record_index(tmp_path, small_corpus):
    path = tmp_path / "c.jsonl"
    save_corpus(small_corpus, path)
    lines = path.read_text().splitlines()
    lines[3] = '{"id": 2, "transcript": [1]}'
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(ParseError) as exc:
        load_corpus(path)
    assert exc.value.record == 3

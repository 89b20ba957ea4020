import numpy as np
import pytest

from upl_lab.corpus import CorpusConfig, synth_corpus
from upl_lab.model import ModelConfig, Transducer

TINY = dict(encoder_layers=1, encoder_hidden=6, predictor_embed=4, predictor_hidden=5, joiner_hidden=6)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_corpus():
    return synth_corpus(CorpusConfig(num_utterances=12, seed=5, trailing_silence_s=0.3))


@pytest.fixture(scope="session")
def tiny_model():
    return Transducer.init(ModelConfig(**TINY), seed=3)


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE: list[str] = []


def record_criterion(label: str, ok: bool, detail: str) -> None:
    line = f"{label}: {'PASS' if ok else 'FAIL'} | {detail}"
    ACCEPTANCE.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)

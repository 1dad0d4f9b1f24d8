import numpy as np
import pytest
import torch

from lmcodec.data import build_segments
from lmcodec.frontend import make_synthetic_providers
from lmcodec.profiles import TINY
from lmcodec.synthetic_corpus import make_synthetic_utterances

torch.set_num_threads(1)

# Filled by test_acceptance; printed once at the end of the run.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def providers():
    return make_synthetic_providers(seed=0, profile=TINY)


@pytest.fixture(scope="session")
def utterances():
    return make_synthetic_utterances(n_texts=8, utterances_per_text=1, sample_rate=TINY.sample_rate, seed=0)


@pytest.fixture(scope="session")
def segments(utterances):
    return build_segments(utterances, min_s=0.5, max_s=3.0)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def sine(freq, seconds, rate, amp=0.5):
    t = np.arange(int(round(seconds * rate))) / rate
    return amp * np.sin(2 * np.pi * freq * t)

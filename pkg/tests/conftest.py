import numpy as np
import pytest

from slowcpc.audio_io import load_manifest
from slowcpc.config import ModelConfig, RegConfig, TrainConfig
from slowcpc.synth import SynthConfig, generate_synthetic_corpus

TINY_MODEL = ModelConfig(channels=4, context_dim=4, prediction_steps=2, negatives=3)


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny_corpus")
    cfg = SynthConfig(num_phones=3, num_speakers=2, utterances_per_speaker=3,
                      utterance_dur=0.5, seed=11)
    return generate_synthetic_corpus(cfg, root)


@pytest.fixture(scope="session")
def tiny_dataset(tiny_corpus):
    return load_manifest(tiny_corpus)


@pytest.fixture
def tiny_train_cfg():
    return TrainConfig(steps=3, batch_size=2, window_samples=1600, checkpoint_every=2,
                       seed=5, model=TINY_MODEL, reg=RegConfig(combined_mode="se+lorr"))


@pytest.fixture
def rng():
    return np.random.default_rng(0)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)

import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from tf2dnn.adaptation import build_ubm  # noqa: E402
from tf2dnn.synth import SynthConfig, generate  # noqa: E402
from tf2dnn.trainer import TrainConfig, train  # noqa: E402

SMALL_SYNTH = SynthConfig(dim=10, n_speakers=12, sessions_per_speaker=6, frames_per_session=60, speaker_rank=3,
                          speaker_scale=2.0, session_rank=2, session_scale=1.0, frame_rank=4, noise=0.3,
                          train_sessions=4, enrol_sessions=1, enrol_utterances=3, test_sessions=1, seed=21)
SMALL_TRAIN = TrainConfig(epochs=12, batch_size=64, encoder=(24,), bottleneck=3, decoder=(24,), r1=2, r2=4,
                          lr_theta=3e-3, lr_session=1e-2, lr_speaker=2e-3, seed=21)


@pytest.fixture(scope="session")
def corpus():
    return generate(SMALL_SYNTH)


@pytest.fixture(scope="session")
def ubm(corpus):
    params, factors, _ = train(SMALL_TRAIN, corpus.train)
    return build_ubm(params, factors, corpus.train)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)

import numpy as np
import pytest

from segvox.audio_features import FeatureConfig, Waveform
from segvox.corpus import iter_pair_examples
from segvox.seg_model import ModelConfig, OptimizerConfig, train
from segvox.synth import synth_stream

SR = 16000

_acceptance_lines = []


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(n, title): numbered acceptance criterion")


def pytest_runtest_logreport(report):
    if report.when != "call":
        return
    for mark in getattr(report, "acceptance_marks", ()):
        _acceptance_lines.append((mark[0], mark[1], report.outcome, report.duration))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    rep.acceptance_marks = [m.args for m in item.iter_markers("acceptance")]


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_lines:
        return
    terminalreporter.section("acceptance criteria")
    for n, title, outcome, duration in sorted(_acceptance_lines):
        status = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"[{status}] criterion {n}: {title} ({duration:.1f}s)")


def tone(freq, seconds, sr=SR, amp=0.5):
    t = np.arange(int(round(seconds * sr))) / sr
    return amp * np.sin(2 * np.pi * freq * t)


@pytest.fixture
def fcfg():
    return FeatureConfig()


def synthetic_examples(n, first_seed=1000, fcfg=FeatureConfig()):
    examples, seed = [], first_seed
    while len(examples) < n:
        wave, records = synth_stream(seed, f"train{seed}")
        examples.extend(iter_pair_examples(records, wave, fcfg))
        seed += 1
    return examples[:n]


@pytest.fixture(scope="session")
def trained_model():
    """Desk-scale model trained on 100 synthetic pair examples."""
    examples = synthetic_examples(100)
    opt = OptimizerConfig(lr_scale=1.0, warmup_steps=200, batch_size=8, accum_grad=1,
                          epochs=30, valid_fraction=0.1, seed=0)
    return train(ModelConfig.desk(), examples, opt)


@pytest.fixture
def silence():
    return Waveform(np.zeros(SR), SR, "silence")

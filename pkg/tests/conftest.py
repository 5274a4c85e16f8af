import numpy as np
import pytest
import torch

from acoustic_ssm.audio import Waveform


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _torch_seed():
    torch.manual_seed(0)


def sine(freq, rate, n, amp=0.5):
    return Waveform(amp * np.sin(2 * np.pi * freq * np.arange(n) / rate), rate)


def peak_hz(w: Waveform) -> tuple[float, float]:
    """(frequency of the largest FFT bin, bin width)."""
    spec = np.abs(np.fft.rfft(w.samples))
    return float(np.argmax(spec) * w.rate / len(w)), w.rate / len(w)


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """3 classes x 8 clips, 0.5 s at 4 kHz."""
    from acoustic_ssm.synth import make_synth

    out = tmp_path_factory.mktemp("tiny_corpus")
    return make_synth(out, n_classes=3, clips_per_class=8, seed=3, rate=4000, seconds=0.5)


# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def criterion_log():
    def record(number: int, passed: bool, detail: str):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'} - {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)

import numpy as np
import pytest

from mssbench.audio_io import AudioBuffer

ACCEPTANCE_RESULTS = []


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def stereo_noise(rng):
    def make(seconds=1.0, rate=8000):
        return AudioBuffer(rng.standard_normal((2, int(seconds * rate))), rate)
    return make


class _Criterion:
    def __init__(self, ident, text):
        self.ident, self.text = ident, text

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            status = "PASS"
        elif issubclass(exc_type, pytest.skip.Exception):
            status = "SKIP"
        else:
            status = "FAIL"
        ACCEPTANCE_RESULTS.append((self.ident, self.text, status))
        return False


@pytest.fixture
def criterion():
    """``with criterion("AC1", "..."):`` records one pass/fail line for the summary."""
    return _Criterion


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for ident, text, status in sorted(ACCEPTANCE_RESULTS, key=lambda r: (len(r[0]), r[0])):
        terminalreporter.write_line(f"{status}  {ident}  {text}")

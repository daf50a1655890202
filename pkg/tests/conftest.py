import struct

import numpy as np
import pytest

from violin_amt.audio_io import AudioClip


def peak_frequency(x, sr, fmin=20.0, fmax=None, pad=1 << 21):
    """Dominant frequency of ``x`` from a zero-padded Hann-windowed FFT.

    A quadratic fit on the log magnitude around the top bin refines the
    estimate well below the bin spacing.
    """
    x = np.asarray(x, dtype=np.float64)
    n = max(pad, 1 << int(np.ceil(np.log2(len(x)))))
    spec = np.abs(np.fft.rfft(x * np.hanning(len(x)), n))
    freqs = np.fft.rfftfreq(n, 1.0 / sr)
    band = (freqs >= fmin) & (freqs <= (fmax if fmax is not None else sr / 2))
    k = np.flatnonzero(band)[np.argmax(spec[band])]
    a, b, c = np.log(spec[k - 1:k + 2] + 1e-300)
    shift = 0.5 * (a - c) / (a - 2 * b + c)
    return freqs[k] + shift * sr / n


def tone(freq, sr, seconds, amp=0.5, phase=0.0):
    t = np.arange(int(round(seconds * sr))) / sr
    return AudioClip(amp * np.sin(2 * np.pi * freq * t + phase), sr)


def wav_bytes(samples_bytes, channels, sr, bits, code=1, extensible=False):
    block = channels * bits // 8
    if extensible:
        fmt = struct.pack("<HHIIHH", 0xFFFE, channels, sr, sr * block, block, bits)
        fmt += struct.pack("<HHI", 22, bits, 0) + struct.pack("<H", code) + b"\x00" * 14
    else:
        fmt = struct.pack("<HHIIHH", code, channels, sr, sr * block, block, bits)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    body += b"data" + struct.pack("<I", len(samples_bytes)) + samples_bytes
    return b"RIFF" + struct.pack("<I", len(body)) + body


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# One line per acceptance criterion, filled in by test_acceptance.py and
# printed after the run so it survives output capturing.
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number])

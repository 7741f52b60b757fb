"""Audio container and WAV file handling.

All processing assumes 16 kHz mono float signals in [-1, 1]. Files at
other rates or with two channels are converted on load (stereo is
downmixed by averaging).
"""

from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

from sparseasr.errors import DataFormatError, InvalidInputError

DEFAULT_SAMPLE_RATE = 16000


@dataclass
class AudioSignal:
    """A mono waveform with its sample rate."""

    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise InvalidInputError(f"expected mono signal, got shape {self.samples.shape}")
        if self.sample_rate <= 0:
            raise InvalidInputError(f"sample_rate must be positive, got {self.sample_rate}")
        if self.samples.size and not np.all(np.isfinite(self.samples)):
            raise InvalidInputError("signal contains non-finite samples")

    @property
    def duration(self):
        """Length in seconds."""
        return self.samples.size / self.sample_rate

    def resampled(self, rate):
        """Return a copy converted to `rate` by polyphase resampling."""
        if rate == self.sample_rate:
            return AudioSignal(self.samples.copy(), self.sample_rate)
        frac = Fraction(int(rate), int(self.sample_rate)).limit_denominator(1000)
        out = resample_poly(self.samples, frac.numerator, frac.denominator)
        return AudioSignal(out, rate)


def load_wav(path, target_rate=DEFAULT_SAMPLE_RATE):
    """Read a PCM WAV file as a mono AudioSignal at `target_rate`.

    16-bit signed little-endian is the canonical format; other integer
    widths and float WAVs are accepted and rescaled. Stereo content is
    downmixed by averaging the channels.
    """
    try:
        rate, data = wavfile.read(path)
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise DataFormatError(f"cannot read WAV file {path}: {exc}") from exc
    if data.ndim == 2:
        data = data.mean(axis=1)
    if np.issubdtype(data.dtype, np.integer):
        scale = float(np.iinfo(data.dtype).max) + 1.0
        data = data.astype(np.float64) / scale
    else:
        data = data.astype(np.float64)
    sig = AudioSignal(data, int(rate))
    if target_rate is not None and sig.sample_rate != target_rate:
        sig = sig.resampled(target_rate)
    return sig


def save_wav(path, signal):
    """Write an AudioSignal as 16-bit PCM, clipping to [-1, 1]."""
    clipped = np.clip(signal.samples, -1.0, 1.0)
    pcm = np.round(clipped * 32767.0).astype(np.int16)
    wavfile.write(path, int(signal.sample_rate), pcm)

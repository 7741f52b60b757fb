"""HTK-style MFCC front-end for the reference system.

39 dimensions per 10 ms frame: log-energy, 12 liftered and mean-normalized
cepstral coefficients, then first and second temporal derivatives of the
13 static values.
"""

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.fft import dct

from sparseasr.errors import DataFormatError, InvalidInputError
from sparseasr.frontend import hz_to_mel, mel_to_hz

MFCC_MAGIC = b"MFC1"

LOG_FLOOR = 1e-10


@dataclass(frozen=True)
class MfccConfig:
    frame_ms: float = 25.0
    hop_ms: float = 10.0
    n_fft: int = 512
    n_filters: int = 26
    n_ceps: int = 12
    lifter: int = 22
    pre_emphasis: float = 0.97
    delta_window: int = 2
    f_lo: float = 0.0
    f_hi: float = 8000.0


@dataclass
class MfccSequence:
    """39-dim feature frames at 100 Hz: [log-E, c1..c12, deltas, delta-deltas]."""

    frames: np.ndarray  # (T, 39)
    frame_rate: float = 100.0

    @property
    def n_frames(self):
        return self.frames.shape[0]

    @property
    def dim(self):
        return self.frames.shape[1]


def mel_filterbank(n_filters, n_fft, sample_rate, f_lo, f_hi):
    """Triangular filters with edges uniform on the Mel scale."""
    edges = mel_to_hz(np.linspace(hz_to_mel(f_lo), hz_to_mel(f_hi), n_filters + 2))
    bins = np.floor((n_fft + 1) * edges / sample_rate).astype(int)
    fb = np.zeros((n_filters, n_fft // 2 + 1))
    for m in range(1, n_filters + 1):
        lo, ctr, hi = bins[m - 1], bins[m], bins[m + 1]
        for k in range(lo, ctr):
            if ctr > lo:
                fb[m - 1, k] = (k - lo) / (ctr - lo)
        for k in range(ctr, hi):
            if hi > ctr:
                fb[m - 1, k] = (hi - k) / (hi - ctr)
    return fb


def deltas(x, window=2):
    """Regression-based temporal derivative with edge replication."""
    t = x.shape[0]
    padded = np.concatenate([np.repeat(x[:1], window, axis=0), x,
                             np.repeat(x[-1:], window, axis=0)], axis=0)
    num = np.zeros_like(x, dtype=np.float64)
    for theta in range(1, window + 1):
        num += theta * (padded[window + theta:window + theta + t]
                        - padded[window - theta:window - theta + t])
    return num / (2.0 * sum(theta ** 2 for theta in range(1, window + 1)))


def mfcc(signal, cfg=MfccConfig()):
    """Compute an MfccSequence from an AudioSignal.

    Pipeline: first-order pre-emphasis, Hamming-windowed frames, magnitude
    spectrum, triangular Mel filterbank, log, DCT-II keeping c1..c12,
    sinusoidal liftering, per-utterance cepstral mean normalization,
    log-energy, then delta and delta-delta appended.
    """
    fs = signal.sample_rate
    frame_len = int(round(cfg.frame_ms * fs / 1000.0))
    hop = int(round(cfg.hop_ms * fs / 1000.0))
    x = signal.samples
    if x.size < frame_len:
        raise InvalidInputError(
            f"signal of {x.size} samples shorter than one {frame_len}-sample frame")
    emphasized = np.concatenate([x[:1], x[1:] - cfg.pre_emphasis * x[:-1]])
    n_frames = 1 + (x.size - frame_len) // hop
    idx = np.arange(frame_len)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = emphasized[idx]

    log_energy = np.log(np.maximum((frames ** 2).sum(axis=1), LOG_FLOOR))

    window = np.hamming(frame_len)
    spectrum = np.abs(np.fft.rfft(frames * window, n=cfg.n_fft, axis=1))
    fb = mel_filterbank(cfg.n_filters, cfg.n_fft, fs, cfg.f_lo, min(cfg.f_hi, fs / 2))
    mel_log = np.log(np.maximum(spectrum @ fb.T, LOG_FLOOR))
    ceps = dct(mel_log, type=2, norm="ortho", axis=1)[:, 1:cfg.n_ceps + 1]

    n = np.arange(1, cfg.n_ceps + 1)
    ceps = ceps * (1.0 + 0.5 * cfg.lifter * np.sin(np.pi * n / cfg.lifter))
    ceps = ceps - ceps.mean(axis=0)

    static = np.concatenate([log_energy[:, None], ceps], axis=1)
    d1 = deltas(static, cfg.delta_window)
    d2 = deltas(d1, cfg.delta_window)
    return MfccSequence(np.concatenate([static, d1, d2], axis=1),
                        frame_rate=1000.0 / cfg.hop_ms)


# ---------------------------------------------------------------------------
# MFC1 serialization
# ---------------------------------------------------------------------------

def save_mfcc(path, seq):
    with open(path, "wb") as fh:
        fh.write(MFCC_MAGIC)
        fh.write(struct.pack("<IfI", seq.dim, float(seq.frame_rate), seq.n_frames))
        fh.write(np.ascontiguousarray(seq.frames, dtype="<f4").tobytes())


def load_mfcc(path):
    with open(path, "rb") as fh:
        if fh.read(4) != MFCC_MAGIC:
            raise DataFormatError(f"{path}: bad magic")
        dim, frame_rate, n_frames = struct.unpack("<IfI", fh.read(12))
        raw = fh.read(4 * dim * n_frames)
        if len(raw) != 4 * dim * n_frames:
            raise DataFormatError(f"{path}: truncated matrix")
    frames = np.frombuffer(raw, dtype="<f4").reshape(n_frames, dim).astype(np.float64)
    return MfccSequence(frames, float(frame_rate))

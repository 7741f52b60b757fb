"""Formant-synthesized pseudo-word corpus.

A stand-in for licensed isolated-word corpora: each class is a fixed
syllable pattern (vowel formant trajectories plus an onset event), each
pseudo-speaker a pitch register and vocal-tract length factor, and each
utterance a seeded jitter of timing, pitch contour, spectral tilt, and
amplitude. Synthesis is additive: harmonics of a declining f0 contour
shaped by Lorentzian formant resonances.

Classes are deliberately confusable: several minimal pairs differ only in
their onset event (single versus double click, burst center) or in one
vowel of the glide, so recognition rates stay off the ceiling and react
to noise.
"""

import json
from dataclasses import dataclass

import numpy as np
from scipy.signal import butter, lfilter

from sparseasr.audio import AudioSignal, save_wav

SAMPLE_RATE = 16000

# (F1, F2, F3) targets in Hz
VOWELS = {
    "a": (730.0, 1090.0, 2440.0),
    "i": (270.0, 2290.0, 3010.0),
    "u": (300.0, 870.0, 2240.0),
    "e": (530.0, 1840.0, 2480.0),
    "o": (570.0, 840.0, 2410.0),
    "ae": (660.0, 1720.0, 2410.0),
}

# Onset events: None, a wideband click, a double click (fast temporal
# structure), or a shaped noise burst at a center frequency.
CLICK = ("click",)
DCLICK = ("dclick",)


def BURST(cf):
    return ("burst", cf)


# Per-class syllable patterns: (vowel glide, onset event). Adjacent pairs
# are minimal: 0/1 and 4/5 differ only in click count, 2/3 and 6/7 in one
# vowel, 8/9 in burst center.
CLASS_PATTERNS = [
    [(("a", "i"), CLICK)],
    [(("a", "i"), DCLICK)],
    [(("u", "e"), BURST(1500.0)), (("o", "o"), None)],
    [(("u", "o"), BURST(1500.0)), (("o", "o"), None)],
    [(("o", "a"), None), (("i", "i"), CLICK)],
    [(("o", "a"), None), (("i", "i"), DCLICK)],
    [(("e", "e"), BURST(3000.0)), (("a", "u"), None)],
    [(("ae", "ae"), BURST(3000.0)), (("a", "u"), None)],
    [(("i", "u"), BURST(900.0))],
    [(("i", "u"), BURST(2600.0))],
]

SPEAKER_F0 = [105.0, 135.0, 175.0, 220.0]
SPEAKER_VTL = [0.92, 1.0, 1.07, 1.15]

FORMANT_BANDWIDTHS = (90.0, 110.0, 170.0)


def _formant_envelope(freqs, formants, vtl, tilt):
    """Spectral magnitude from Lorentzian resonances plus variable tilt."""
    env = np.zeros_like(freqs)
    for (f, bw) in zip(formants, FORMANT_BANDWIDTHS):
        fc = f * vtl
        env += 1.0 / (1.0 + ((freqs - fc) / (bw * 0.75)) ** 2)
    rolloff = (np.maximum(freqs, 100.0) / 1000.0) ** tilt
    return env * rolloff / (1.0 + (freqs / 3200.0) ** 2)


def _click(n_total, double):
    out = np.zeros(n_total)
    b, a = butter(2, [400.0, 6500.0], btype="bandpass", fs=SAMPLE_RATE)

    def one(pos):
        x = np.zeros(n_total)
        x[pos] = 1.0
        y = lfilter(b, a, x)
        return y / (np.abs(y).max() + 1e-9)

    out += one(0)
    if double:
        out += one(int(0.035 * SAMPLE_RATE))
    tail = int(0.01 * SAMPLE_RATE)
    fade = np.ones(n_total)
    fade[-tail:] = np.linspace(1, 0, tail)
    return out * fade


def _burst(rng, center, n_samples):
    noise = rng.standard_normal(n_samples)
    lo = max(center * 0.6, 120.0)
    hi = min(center * 1.6, 7200.0)
    b, a = butter(2, [lo, hi], btype="bandpass", fs=SAMPLE_RATE)
    shaped = lfilter(b, a, noise)
    fade = np.hanning(2 * n_samples)[n_samples:]
    return shaped / (np.abs(shaped).max() + 1e-9) * fade


def _onset(rng, event, n_avail):
    if event is None:
        return None
    if event[0] == "click":
        n = min(int(0.020 * SAMPLE_RATE), n_avail)
        return _click(n, double=False)
    if event[0] == "dclick":
        n = min(int(0.055 * SAMPLE_RATE), n_avail)
        return _click(n, double=True)
    n = min(int(rng.uniform(0.018, 0.032) * SAMPLE_RATE), n_avail)
    return _burst(rng, event[1], n)


def _syllable(rng, vowel_pair, onset_event, f0_track, vtl, tilt):
    """One syllable: optional onset event then a vowel glide."""
    n = f0_track.size
    t = np.arange(n) / SAMPLE_RATE
    start = np.array(VOWELS[vowel_pair[0]])
    end = np.array(VOWELS[vowel_pair[1]])
    ramp = np.minimum(t / max(t[-1], 1e-6), 1.0)

    phase = 2.0 * np.pi * np.cumsum(f0_track) / SAMPLE_RATE
    voiced = np.zeros(n)
    max_harm = int(7000.0 / f0_track.max())
    block = 160
    starts = np.arange(0, n, block)
    for h in range(1, max_harm + 1):
        carrier = np.sin(h * phase)
        amp = np.empty(n)
        for s in starts:
            mid = min(s + block // 2, n - 1)
            formants = start + (end - start) * ramp[mid]
            amp[s:s + block] = _formant_envelope(
                np.array([h * f0_track[mid]]), formants, vtl, tilt)[0]
        voiced += amp * carrier

    attack = int(0.030 * SAMPLE_RATE)
    decay = int(0.050 * SAMPLE_RATE)
    env = np.ones(n)
    env[:attack] = 0.5 * (1 - np.cos(np.pi * np.arange(attack) / attack))
    env[-decay:] *= 0.5 * (1 + np.cos(np.pi * np.arange(decay) / decay))
    out = voiced * env / (np.abs(voiced).max() + 1e-9)

    onset = _onset(rng, onset_event, n)
    if onset is not None:
        out[:onset.size] += 0.9 * onset
    return out


def synthesize_word(class_id, speaker_id, utterance_id, seed=0):
    """Deterministic pseudo-word utterance for (class, speaker, index)."""
    pattern = CLASS_PATTERNS[class_id % len(CLASS_PATTERNS)]
    rng = np.random.default_rng(
        np.random.SeedSequence([seed, class_id, speaker_id, utterance_id]))
    f0_base = SPEAKER_F0[speaker_id % len(SPEAKER_F0)] * rng.uniform(0.94, 1.06)
    vtl = SPEAKER_VTL[speaker_id % len(SPEAKER_VTL)] * rng.uniform(0.96, 1.04)
    rate = rng.uniform(0.85, 1.15)
    tilt = rng.uniform(-0.25, 0.25)

    pieces = [np.zeros(int(0.02 * SAMPLE_RATE))]
    for vowels, onset_event in pattern:
        dur = rng.uniform(0.14, 0.21) * rate
        n = int(dur * SAMPLE_RATE)
        contour = np.linspace(rng.uniform(1.0, 1.08), rng.uniform(0.88, 0.96), n) \
            * (1.0 + 0.02 * np.sin(2 * np.pi * rng.uniform(2.0, 4.0)
                                   * np.arange(n) / SAMPLE_RATE))
        f0 = f0_base * contour
        pieces.append(_syllable(rng, vowels, onset_event, f0, vtl, tilt))
        pieces.append(np.zeros(int(rng.uniform(0.035, 0.065) * SAMPLE_RATE)))
    pieces.append(np.zeros(int(0.02 * SAMPLE_RATE)))
    samples = np.concatenate(pieces)
    samples = samples * 0.3 * rng.uniform(0.8, 1.15) / (np.abs(samples).max() + 1e-9)
    return AudioSignal(samples, SAMPLE_RATE)


@dataclass
class CorpusSpec:
    classes: int = 10
    speakers: int = 4
    train_per_speaker: int = 5
    test_per_speaker: int = 5
    seed: int = 0


def synthesize_corpus(out_dir, spec=CorpusSpec()):
    """Write the corpus under `out_dir` and return the manifest path.

    Layout: audio files under out_dir/audio/, entries in
    out_dir/manifest.json with paths relative to the manifest.
    """
    from pathlib import Path

    out_dir = Path(out_dir)
    audio_dir = out_dir / "audio"
    audio_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    per_speaker = spec.train_per_speaker + spec.test_per_speaker
    for c in range(spec.classes):
        label = f"word{c:02d}"
        for s in range(spec.speakers):
            for u in range(per_speaker):
                sig = synthesize_word(c, s, u, seed=spec.seed)
                split = "train" if u < spec.train_per_speaker else "test"
                name = f"{label}_spk{s}_{u:02d}.wav"
                save_wav(audio_dir / name, sig)
                entries.append({"path": f"audio/{name}", "label": label,
                                "speaker": f"spk{s}", "split": split})
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(entries, indent=1, sort_keys=True))
    return manifest_path

"""Corpus management, noise mixing, evaluation tables, and profiling.

Noise sources named after the standard NOISEX conditions are generated
rather than shipped (the repository stays corpus-free): white is seeded
Gaussian, babble is a sum of syllabically modulated speech-shaped voices,
volvo a low-frequency car rumble, destroyerengine machinery hum plus
broadband rumble. A user-supplied WAV path works anywhere a name does.
"""

import csv
import json
import time
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import butter, lfilter

from sparseasr.audio import AudioSignal, load_wav, save_wav
from sparseasr.errors import DataFormatError, InvalidInputError

CLEAN = float("inf")
TIMER_RESOLUTION = 1e-6  # seconds; zero timings are reported as bounds


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ManifestEntry:
    path: str
    label: str
    speaker: str = ""
    split: str = "train"


@dataclass
class CorpusManifest:
    """A list of labeled audio files with train/test split assignments."""

    entries: list
    root: Path = field(default_factory=Path)

    @property
    def vocabulary(self):
        return sorted({e.label for e in self.entries})

    def subset(self, split):
        return [e for e in self.entries if e.split == split]

    def resolve(self, entry):
        p = Path(entry.path)
        return p if p.is_absolute() else self.root / p


def load_manifest(path, check_paths=True):
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(raw, list):
        raise DataFormatError(f"{path}: manifest must be a JSON array")
    entries = []
    for item in raw:
        try:
            entries.append(ManifestEntry(path=item["path"], label=item["label"],
                                         speaker=item.get("speaker", ""),
                                         split=item.get("split", "train")))
        except (KeyError, TypeError) as exc:
            raise DataFormatError(f"{path}: bad manifest entry {item!r}") from exc
    manifest = CorpusManifest(entries=entries, root=path.parent)
    if check_paths:
        for e in manifest.entries:
            if not manifest.resolve(e).exists():
                raise DataFormatError(f"{path}: missing audio file {e.path}")
    return manifest


def save_manifest(path, manifest):
    path = Path(path)
    raw = [{"path": e.path, "label": e.label, "speaker": e.speaker, "split": e.split}
           for e in manifest.entries]
    path.write_text(json.dumps(raw, indent=1, sort_keys=True))


# ---------------------------------------------------------------------------
# noise
# ---------------------------------------------------------------------------

NOISE_NAMES = ("babble", "destroyerengine", "volvo", "white")


@dataclass(frozen=True)
class NoiseSpec:
    """A named or file-backed noise at a target SNR."""

    name: str
    snr_db: float
    seed: int = 0

    def __post_init__(self):
        if not np.isfinite(self.snr_db) and self.snr_db != CLEAN:
            raise InvalidInputError(f"snr_db must be finite or clean, got {self.snr_db}")


def _speech_shaped(rng, n, fs):
    noise = rng.standard_normal(n)
    b, a = butter(2, [150.0, 4200.0], btype="bandpass", fs=fs)
    shaped = lfilter(b, a, noise)
    b2, a2 = butter(1, 900.0, btype="lowpass", fs=fs)
    return lfilter(b2, a2, shaped) + 0.25 * shaped


def generate_noise(name, n_samples, sample_rate=16000, seed=0):
    """Seeded synthetic stand-ins for the standard noise conditions."""
    if isinstance(seed, np.random.SeedSequence):
        rng = np.random.default_rng(seed)
    else:
        rng = np.random.default_rng(
            np.random.SeedSequence([seed, zlib.crc32(name.encode())]))
    t = np.arange(n_samples) / sample_rate
    if name == "white":
        out = rng.standard_normal(n_samples)
    elif name == "babble":
        out = np.zeros(n_samples)
        for _ in range(6):
            voice = _speech_shaped(rng, n_samples, sample_rate)
            syllabic = 0.5 * (1.0 + np.sin(
                2 * np.pi * rng.uniform(2.5, 6.0) * t + rng.uniform(0, 2 * np.pi)))
            out += voice * syllabic ** 1.5
    elif name == "volvo":
        rumble = lfilter(*butter(2, 130.0, btype="lowpass", fs=sample_rate),
                         rng.standard_normal(n_samples))
        drone = 0.15 * np.sin(2 * np.pi * 33.0 * t + rng.uniform(0, 2 * np.pi))
        out = rumble + drone
    elif name == "destroyerengine":
        broadband = lfilter(*butter(2, 1100.0, btype="lowpass", fs=sample_rate),
                            rng.standard_normal(n_samples))
        hum = sum(0.3 / (k + 1) * np.sin(2 * np.pi * 60.0 * (k + 1) * t
                                         + rng.uniform(0, 2 * np.pi))
                  for k in range(4))
        sweep = 1.0 + 0.3 * np.sin(2 * np.pi * 0.7 * t + rng.uniform(0, 2 * np.pi))
        out = (broadband + hum) * sweep
    else:
        raise InvalidInputError(f"unknown noise name {name!r}")
    return AudioSignal(out / np.sqrt(np.mean(out ** 2)) * 0.1, sample_rate)


def resolve_noise(name, n_samples, sample_rate=16000, seed=0):
    """Named generator or a user-supplied WAV path."""
    if name in NOISE_NAMES:
        return generate_noise(name, n_samples, sample_rate, seed)
    p = Path(name)
    if p.exists():
        sig = load_wav(p, target_rate=sample_rate)
        return sig
    raise InvalidInputError(f"noise {name!r} is neither a known name nor a file")


def mix_noise(speech, noise, snr_db, seed=0):
    """Add noise scaled so the speech-to-noise power ratio hits `snr_db`.

    Powers are measured over the whole utterance. Shorter noise is looped
    from a seeded random offset. If the mix would clip, speech and noise
    are scaled down together, preserving the ratio. `snr_db=inf` returns
    the speech unchanged.
    """
    if snr_db == CLEAN:
        return AudioSignal(speech.samples.copy(), speech.sample_rate)
    if speech.sample_rate != noise.sample_rate:
        raise InvalidInputError("speech and noise sample rates differ")
    n = speech.samples.size
    nz = noise.samples
    if nz.size < n:
        reps = int(np.ceil(n / nz.size)) + 1
        nz = np.tile(nz, reps)
    rng = np.random.default_rng(seed)
    offset = int(rng.integers(0, nz.size - n + 1))
    nz = nz[offset:offset + n]

    p_speech = float(np.mean(speech.samples ** 2))
    p_noise = float(np.mean(nz ** 2))
    if p_speech <= 0.0 or p_noise <= 0.0:
        raise InvalidInputError("zero-power speech or noise")
    scale = np.sqrt(p_speech / (p_noise * 10.0 ** (snr_db / 10.0)))
    mixed = speech.samples + scale * nz
    peak = np.abs(mixed).max()
    if peak > 1.0:
        mixed = mixed / peak
    return AudioSignal(mixed, speech.sample_rate)


def _entry_seed(seed, *parts):
    h = zlib.crc32("|".join(str(p) for p in parts).encode())
    return np.random.SeedSequence([int(seed), h])


def assign_noises(manifest, noises, seed=0):
    """Seeded random noise name per training file (recorded mapping)."""
    if not noises:
        raise InvalidInputError("need at least one noise")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x6D43]))
    train = manifest.subset("train")
    picks = rng.integers(0, len(noises), size=len(train))
    return {e.path: noises[int(p)] for e, p in zip(train, picks)}


def build_multicondition(manifest, noises, snr_db=20.0, seed=0, out_dir=None):
    """Mix every training file with one seeded-random noise at `snr_db`.

    Writes the mixed audio under `out_dir` and returns (derived manifest,
    assignment mapping). Test entries pass through unchanged.
    """
    out_dir = Path(out_dir)
    (out_dir / "audio").mkdir(parents=True, exist_ok=True)
    assignment = assign_noises(manifest, noises, seed)
    entries = []
    for e in manifest.entries:
        if e.split != "train":
            entries.append(ManifestEntry(path=str(manifest.resolve(e)), label=e.label,
                                         speaker=e.speaker, split=e.split))
            continue
        noise_name = assignment[e.path]
        speech = load_wav(manifest.resolve(e))
        noise_seed, mix_seed = _entry_seed(seed, e.path, noise_name, snr_db).spawn(2)
        noise = resolve_noise(noise_name, speech.samples.size, speech.sample_rate,
                              seed=noise_seed)
        mixed = mix_noise(speech, noise, snr_db, seed=mix_seed)
        name = Path(e.path).stem + f"_{noise_name}_{snr_db:g}dB.wav"
        save_wav(out_dir / "audio" / name, mixed)
        entries.append(ManifestEntry(path=f"audio/{name}", label=e.label,
                                     speaker=e.speaker, split=e.split))
    derived = CorpusManifest(entries=entries, root=out_dir)
    save_manifest(out_dir / "manifest.json", derived)
    (out_dir / "noise_assignment.json").write_text(
        json.dumps(assignment, indent=1, sort_keys=True))
    return derived, assignment


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def _snr_label(snr):
    return "clean" if snr == CLEAN else f"{float(snr):g}"


def parse_snr(token):
    t = str(token).strip().lower()
    if t in ("clean", "inf"):
        return CLEAN
    try:
        return float(t)
    except ValueError:
        raise InvalidInputError(f"bad SNR value {token!r}") from None


@dataclass
class EvaluationReport:
    """Recognition rates and confusions per (system, noise, snr) cell."""

    rates: dict = field(default_factory=dict)       # system -> noise -> snr -> %
    confusions: dict = field(default_factory=dict)  # "sys|noise|snr" -> {labels, matrix}
    realtime: dict = field(default_factory=dict)    # system -> stage taus (optional)

    def rate(self, system, noise, snr):
        return self.rates[system][noise][_snr_label(snr)]

    def merge(self, other):
        for system, per_noise in other.rates.items():
            mine = self.rates.setdefault(system, {})
            for noise, per_snr in per_noise.items():
                mine.setdefault(noise, {}).update(per_snr)
        self.confusions.update(other.confusions)
        self.realtime.update(other.realtime)
        return self

    def to_json(self):
        return json.dumps({"rates": self.rates, "confusions": self.confusions,
                           "realtime": self.realtime},
                          sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text):
        raw = json.loads(text)
        return cls(rates=raw.get("rates", {}), confusions=raw.get("confusions", {}),
                   realtime=raw.get("realtime", {}))

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["system", "noise", "snr", "rate_percent"])
            for system in sorted(self.rates):
                for noise in sorted(self.rates[system]):
                    for snr, rate in sorted(self.rates[system][noise].items()):
                        writer.writerow([system, noise, snr, f"{rate:.2f}"])


def evaluate(recognizer, manifest, extractor, noises, snrs, system="system",
             seed=0, split="test"):
    """Score every test file under every (noise, snr) condition.

    `extractor` maps an AudioSignal to the recognizer's feature matrix.
    Mixing is deterministic per (file, noise, snr, seed). Returns an
    EvaluationReport holding one system's grid.
    """
    from sparseasr.hmm import recognize

    files = manifest.subset(split)
    if not files:
        raise InvalidInputError(f"manifest has no '{split}' entries")
    labels = manifest.vocabulary
    label_index = {lb: i for i, lb in enumerate(labels)}
    signals = [(e, load_wav(manifest.resolve(e))) for e in files]

    report = EvaluationReport()
    for noise_name in noises:
        per_snr = {}
        for snr in snrs:
            confusion = np.zeros((len(labels), len(labels)), dtype=np.int64)
            correct = 0
            for e, speech in signals:
                if snr == CLEAN:
                    mixed = speech
                else:
                    noise_seed, mix_seed = _entry_seed(seed, e.path, noise_name,
                                                       snr).spawn(2)
                    noise = resolve_noise(noise_name, speech.samples.size,
                                          speech.sample_rate, seed=noise_seed)
                    mixed = mix_noise(speech, noise, snr, seed=mix_seed)
                predicted, _ = recognize(recognizer, extractor(mixed))
                confusion[label_index[e.label], label_index[predicted]] += 1
                correct += predicted == e.label
            rate = 100.0 * correct / len(signals)
            per_snr[_snr_label(snr)] = rate
            report.confusions[f"{system}|{noise_name}|{_snr_label(snr)}"] = {
                "labels": labels, "matrix": confusion.tolist()}
        report.rates.setdefault(system, {})[noise_name] = per_snr
    return report


# ---------------------------------------------------------------------------
# real-time factors
# ---------------------------------------------------------------------------

def realtime_factor(stage_seconds, audio_seconds):
    """Audio duration over processing duration, per stage and globally.

    A factor >= 1 means the stage keeps up with real time. Zero timings
    are clamped to the timer resolution and flagged as lower bounds.
    """
    if audio_seconds <= 0:
        raise InvalidInputError("audio duration must be positive")
    out = {"stages": {}, "audio_seconds": audio_seconds}
    total = 0.0
    any_bound = False
    for stage, seconds in stage_seconds.items():
        if seconds < 0:
            raise InvalidInputError(f"negative processing time for {stage}")
        bounded = seconds < TIMER_RESOLUTION
        any_bound |= bounded
        clamped = max(seconds, TIMER_RESOLUTION)
        total += clamped
        out["stages"][stage] = {
            "seconds": seconds,
            "factor": audio_seconds / clamped,
            "realtime": audio_seconds / clamped >= 1.0,
            "lower_bound": bounded,
        }
    out["global"] = {
        "seconds": total,
        "factor": audio_seconds / max(total, TIMER_RESOLUTION),
        "realtime": audio_seconds / max(total, TIMER_RESOLUTION) >= 1.0,
        "lower_bound": any_bound,
    }
    return out


class StageTimer:
    """Accumulates wall-clock per stage for realtime_factor."""

    def __init__(self):
        self.seconds = {}

    def add(self, stage, seconds):
        self.seconds[stage] = self.seconds.get(stage, 0.0) + seconds

    def timed(self, stage, fn, *args, **kwargs):
        t0 = time.perf_counter()
        out = fn(*args, **kwargs)
        self.add(stage, time.perf_counter() - t0)
        return out

"""End-to-end experiment orchestration with content-addressed caching.

A run walks train-dict, extract, train-model, evaluate. Every stage's
output directory is named by a hash of the stage inputs (config subset,
seed, upstream artifact keys, manifest content), so reruns with identical
inputs reuse artifacts and produce byte-identical reports. Each artifact
directory carries a meta.json recording the config hash and seed.
"""

import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

from sparseasr import config as config_mod
from sparseasr.audio import load_wav
from sparseasr.errors import ConfigurationError
from sparseasr.frontend import GammatoneFilterbank, cochleogram
from sparseasr.harness import (
    build_multicondition,
    evaluate,
    load_manifest,
    parse_snr,
    realtime_factor,
)
from sparseasr.hmm import load_recognizer, recognize, save_recognizer, train_recognizer
from sparseasr.ica import load_hierarchy, save_hierarchy, train_hierarchy
from sparseasr.mfcc import mfcc, save_mfcc
from sparseasr.projection import BinarizePolicy, extract_features, save_features


def _hash(*parts):
    h = hashlib.sha256()
    for p in parts:
        h.update(str(p).encode())
        h.update(b"\x00")
    return h.hexdigest()[:16]


def _write_meta(stage_dir, stage, cfg, inputs):
    meta = {"stage": stage, "config_hash": config_mod.config_hash(cfg),
            "seed": cfg.seed, "inputs": inputs}
    (stage_dir / "meta.json").write_text(json.dumps(meta, sort_keys=True, indent=1))


def _stage_dir(workdir, stage, key):
    return Path(workdir) / "cache" / f"{stage}-{key}"


def _manifest_fingerprint(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def make_bank(fe):
    return GammatoneFilterbank(fe.n_channels, fe.f_lo, fe.f_hi, fe.sample_rate,
                               fe.bandwidth_factor)


def sparse_extractor(cfg, hierarchy, bank=None):
    """AudioSignal -> dense binary feature matrix for the sparse system."""
    fe = cfg.frontend
    bank = bank or make_bank(fe)
    policy = BinarizePolicy(top_p=cfg.hierarchy.top_p,
                            frame_rate=cfg.hierarchy.feature_rate)

    def extract(signal):
        coch = cochleogram(signal, frame_rate=fe.frame_rate,
                           pre_emphasis=fe.pre_emphasis, bank=bank)
        return extract_features(coch, hierarchy, policy).to_dense()

    return extract


def mfcc_extractor(cfg):
    """AudioSignal -> real feature matrix for the baseline system."""
    return lambda signal: mfcc(signal, cfg.mfcc).frames


@dataclass
class PipelineResult:
    config: object
    report: object
    paths: dict = field(default_factory=dict)
    cached: dict = field(default_factory=dict)


def _training_manifest(cfg, manifest_path, workdir):
    """Clean passthrough or the cached multi-condition derivation."""
    manifest = load_manifest(manifest_path)
    if cfg.training.condition == "clean":
        return manifest, None
    key = _hash("mc", cfg.training, cfg.seed, _manifest_fingerprint(manifest_path))
    stage = _stage_dir(workdir, "multicondition", key)
    if not (stage / "manifest.json").exists():
        stage.mkdir(parents=True, exist_ok=True)
        build_multicondition(manifest, list(cfg.training.noises),
                             snr_db=cfg.training.snr_db, seed=cfg.seed, out_dir=stage)
        _write_meta(stage, "multicondition", cfg,
                    {"manifest": _manifest_fingerprint(manifest_path)})
        cached = False
    else:
        cached = True
    return load_manifest(stage / "manifest.json"), (stage, cached)


def _train_cochleograms(cfg, manifest, bank):
    fe = cfg.frontend
    out = []
    for e in manifest.subset("train"):
        sig = load_wav(manifest.resolve(e), target_rate=fe.sample_rate)
        out.append(cochleogram(sig, frame_rate=fe.frame_rate,
                               pre_emphasis=fe.pre_emphasis, bank=bank))
    return out


def train_dictionary_stage(cfg, manifest_path, workdir, force=False):
    """train-dict with caching; returns (hierarchy, dict file path, cached)."""
    train_manifest, _ = _training_manifest(cfg, manifest_path, workdir)
    key = _hash("dict", cfg.frontend, cfg.hierarchy, cfg.ica, cfg.seed,
                _manifest_fingerprint(manifest_path), cfg.training)
    stage = _stage_dir(workdir, "dict", key)
    path = stage / "hierarchy.dict"
    if path.exists() and not force:
        return load_hierarchy(path), path, True
    stage.mkdir(parents=True, exist_ok=True)
    bank = make_bank(cfg.frontend)
    cochs = _train_cochleograms(cfg, train_manifest, bank)
    hierarchy = train_hierarchy(cochs, list(cfg.hierarchy.levels),
                                contrast=cfg.ica.contrast, max_iter=cfg.ica.max_iter,
                                tol=cfg.ica.tol, seed=cfg.seed)
    save_hierarchy(path, hierarchy)
    _write_meta(stage, "dict", cfg, {"manifest": _manifest_fingerprint(manifest_path)})
    return hierarchy, path, False


def extract_stage(cfg, manifest_path, workdir, hierarchy=None, force=False):
    """Training-split feature extraction with caching.

    Writes one feature file per utterance plus an index JSON mapping
    feature files to labels; returns (index path, cached).
    """
    train_manifest, _ = _training_manifest(cfg, manifest_path, workdir)
    key = _hash("extract", cfg.feature_kind, cfg.frontend, cfg.hierarchy, cfg.mfcc,
                cfg.ica, cfg.seed, cfg.training, _manifest_fingerprint(manifest_path))
    stage = _stage_dir(workdir, "extract", key)
    index_path = stage / "features.json"
    if index_path.exists() and not force:
        return index_path, True
    stage.mkdir(parents=True, exist_ok=True)
    fe = cfg.frontend
    bank = make_bank(fe) if cfg.feature_kind == "sparse" else None
    policy = BinarizePolicy(top_p=cfg.hierarchy.top_p,
                            frame_rate=cfg.hierarchy.feature_rate) \
        if cfg.feature_kind == "sparse" else None
    index = []
    for i, e in enumerate(train_manifest.subset("train")):
        sig = load_wav(train_manifest.resolve(e), target_rate=fe.sample_rate)
        if cfg.feature_kind == "sparse":
            coch = cochleogram(sig, frame_rate=fe.frame_rate,
                               pre_emphasis=fe.pre_emphasis, bank=bank)
            seq = extract_features(coch, hierarchy, policy)
            name = f"{i:05d}.bfv"
            save_features(stage / name, seq)
        else:
            seq = mfcc(sig, cfg.mfcc)
            name = f"{i:05d}.mfc"
            save_mfcc(stage / name, seq)
        index.append({"feature": name, "label": e.label, "source": e.path})
    index_path.write_text(json.dumps(index, sort_keys=True, indent=1))
    _write_meta(stage, "extract", cfg, {"manifest": _manifest_fingerprint(manifest_path)})
    return index_path, False


def load_feature_index(index_path):
    """Dense per-label training sequences from an extract-stage index."""
    from sparseasr.mfcc import load_mfcc
    from sparseasr.projection import load_features

    index = json.loads(Path(index_path).read_text())
    stage = Path(index_path).parent
    by_label = {}
    for item in index:
        p = stage / item["feature"]
        if p.suffix == ".bfv":
            seq = load_features(p).to_dense()
        else:
            seq = load_mfcc(p).frames
        by_label.setdefault(item["label"], []).append(seq)
    return by_label


def train_model_stage(cfg, manifest_path, workdir, index_path, force=False):
    """train-model with caching; returns (recognizer, model path, cached)."""
    key = _hash("models", cfg.feature_kind, cfg.model, cfg.seed,
                _manifest_fingerprint(index_path))
    stage = _stage_dir(workdir, "models", key)
    path = stage / "models.whmm"
    if path.exists() and not force:
        return load_recognizer(path), path, True
    stage.mkdir(parents=True, exist_ok=True)
    by_label = load_feature_index(index_path)
    kind = "bernoulli" if cfg.feature_kind == "sparse" else "gaussian"
    recognizer, _ = train_recognizer(by_label, n_states=cfg.model.n_states,
                                     n_components=cfg.model.n_components, kind=kind,
                                     iterations=cfg.model.em_iterations, seed=cfg.seed)
    save_recognizer(path, recognizer)
    _write_meta(stage, "models", cfg, {"features": _manifest_fingerprint(index_path)})
    return recognizer, path, False


def run_pipeline(cfg, manifest_path, workdir, force=False, system=None):
    """Full run: train-dict, extract, train-model, evaluate.

    Returns a PipelineResult whose report file is byte-identical across
    reruns with the same config, seed, and corpus.
    """
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    system = system or cfg.name
    paths, cached = {}, {}

    hierarchy = None
    if cfg.feature_kind == "sparse":
        hierarchy, dict_path, hit = train_dictionary_stage(cfg, manifest_path, workdir,
                                                           force)
        paths["dict"], cached["dict"] = dict_path, hit

    index_path, hit = extract_stage(cfg, manifest_path, workdir, hierarchy, force)
    paths["features"], cached["features"] = index_path, hit

    recognizer, model_path, hit = train_model_stage(cfg, manifest_path, workdir,
                                                    index_path, force)
    paths["models"], cached["models"] = model_path, hit

    key = _hash("report", config_mod.config_hash(cfg), system,
                _manifest_fingerprint(manifest_path))
    stage = _stage_dir(workdir, "report", key)
    report_path = stage / "report.json"
    if report_path.exists() and not force:
        from sparseasr.harness import EvaluationReport

        report = EvaluationReport.from_json(report_path.read_text())
        cached["report"] = True
    else:
        stage.mkdir(parents=True, exist_ok=True)
        manifest = load_manifest(manifest_path)
        extractor = (sparse_extractor(cfg, hierarchy)
                     if cfg.feature_kind == "sparse" else mfcc_extractor(cfg))
        snrs = [parse_snr(s) for s in cfg.evaluation.snrs]
        report = evaluate(recognizer, manifest, extractor,
                          list(cfg.evaluation.noises), snrs, system=system,
                          seed=cfg.seed)
        report_path.write_text(report.to_json())
        report.write_csv(stage / "report.csv")
        _write_meta(stage, "report", cfg,
                    {"manifest": _manifest_fingerprint(manifest_path)})
        cached["report"] = False
    paths["report"] = report_path
    return PipelineResult(config=cfg, report=report, paths=paths, cached=cached)


def profile_systems(systems, manifest_path, workdir, limit=None):
    """Per-stage and global real-time factors for trained systems.

    `systems` maps a system name to (config, recognizer, extractor).
    Extraction and classification are timed over the test split (optionally
    truncated to `limit` files) against the summed audio duration.
    """
    manifest = load_manifest(manifest_path)
    files = manifest.subset("test")
    if limit:
        files = files[:limit]
    if not files:
        raise ConfigurationError("nothing to profile: no test files")
    out = {}
    for name, (cfg, recognizer, extractor) in systems.items():
        signals = [load_wav(manifest.resolve(e), target_rate=cfg.frontend.sample_rate)
                   for e in files]
        audio_seconds = sum(s.duration for s in signals)
        t0 = time.perf_counter()
        feats = [extractor(s) for s in signals]
        t_extract = time.perf_counter() - t0
        t0 = time.perf_counter()
        for f in feats:
            recognize(recognizer, f)
        t_classify = time.perf_counter() - t0
        out[name] = realtime_factor({"extraction": t_extract,
                                     "classification": t_classify}, audio_seconds)
    return out

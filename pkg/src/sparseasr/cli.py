"""Command line interface.

Subcommands: train-dict, extract, train-model, recognize, evaluate,
profile, synth-corpus, export-bases. Exit codes: 0 success, 1 usage
error, 2 data error, 3 numeric failure.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from sparseasr import config as config_mod
from sparseasr.audio import load_wav
from sparseasr.errors import (
    ConfigurationError,
    DataFormatError,
    InvalidInputError,
    NumericError,
    SparseAsrError,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _load_config(args):
    if getattr(args, "config", None):
        cfg = config_mod.load_config(args.config)
    elif getattr(args, "preset", None):
        cfg = config_mod.preset(args.preset)
    else:
        raise _UsageError("one of --config or --preset is required")
    if getattr(args, "seed", None) is not None:
        cfg = config_mod.from_dict({**config_mod.to_dict(cfg), "seed": args.seed})
    return cfg


def _policy_from_string(text):
    from sparseasr.projection import BinarizePolicy

    key, _, value = text.partition("=")
    if key.strip() != "top_p" or not value:
        raise _UsageError(f"unsupported policy {text!r}; expected top_p=<fraction>")
    return BinarizePolicy(top_p=float(value))


def cmd_synth_corpus(args):
    from sparseasr.synth import CorpusSpec, synthesize_corpus

    spec = CorpusSpec(classes=args.classes, speakers=args.speakers,
                      train_per_speaker=args.train, test_per_speaker=args.test,
                      seed=args.seed)
    manifest = synthesize_corpus(args.out, spec)
    print(manifest)
    return EXIT_OK


def cmd_train_dict(args):
    from sparseasr.frontend import cochleogram
    from sparseasr.harness import load_manifest
    from sparseasr.ica import save_hierarchy, train_hierarchy
    from sparseasr.pipeline import make_bank

    cfg = _load_config(args)
    if cfg.feature_kind != "sparse":
        raise ConfigurationError("train-dict needs a sparse config")
    manifest = load_manifest(args.corpus)
    bank = make_bank(cfg.frontend)
    cochs = []
    for e in manifest.subset("train"):
        sig = load_wav(manifest.resolve(e), target_rate=cfg.frontend.sample_rate)
        cochs.append(cochleogram(sig, frame_rate=cfg.frontend.frame_rate,
                                 pre_emphasis=cfg.frontend.pre_emphasis, bank=bank))
    hierarchy = train_hierarchy(cochs, list(cfg.hierarchy.levels),
                                contrast=cfg.ica.contrast,
                                max_iter=cfg.ica.max_iter, tol=cfg.ica.tol,
                                seed=cfg.seed)
    save_hierarchy(args.out, hierarchy)
    print(f"wrote {args.out} "
          f"({', '.join(str(d.k) for d in hierarchy.levels)} bases per level)")
    return EXIT_OK


def _iter_input_files(path):
    p = Path(path)
    if p.suffix == ".json":
        from sparseasr.harness import load_manifest

        manifest = load_manifest(p)
        return [(manifest.resolve(e), e.label) for e in manifest.entries]
    return [(p, None)]


def cmd_extract(args):
    from sparseasr.frontend import cochleogram
    from sparseasr.ica import load_hierarchy
    from sparseasr.mfcc import MfccConfig, mfcc, save_mfcc
    from sparseasr.pipeline import make_bank
    from sparseasr.projection import extract_features, save_features
    from sparseasr.config import FrontendConfig

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = _iter_input_files(args.infile)
    index = []
    if args.mfcc:
        for i, (path, label) in enumerate(files):
            seq = mfcc(load_wav(path), MfccConfig())
            name = f"{i:05d}.mfc"
            save_mfcc(out_dir / name, seq)
            index.append({"feature": name, "label": label, "source": str(path)})
    else:
        if not args.dict:
            raise _UsageError("extract needs --dict (or --mfcc)")
        hierarchy = load_hierarchy(args.dict)
        policy = _policy_from_string(args.policy)
        fe = FrontendConfig()
        bank = make_bank(fe)
        for i, (path, label) in enumerate(files):
            sig = load_wav(path, target_rate=fe.sample_rate)
            coch = cochleogram(sig, frame_rate=fe.frame_rate,
                               pre_emphasis=fe.pre_emphasis, bank=bank)
            seq = extract_features(coch, hierarchy, policy)
            name = f"{i:05d}.bfv"
            save_features(out_dir / name, seq)
            index.append({"feature": name, "label": label, "source": str(path)})
    (out_dir / "features.json").write_text(json.dumps(index, sort_keys=True, indent=1))
    print(f"wrote {len(index)} feature files to {out_dir}")
    return EXIT_OK


def cmd_train_model(args):
    from sparseasr.hmm import save_recognizer, train_recognizer
    from sparseasr.pipeline import load_feature_index

    cfg = _load_config(args)
    index_path = Path(args.features)
    if index_path.is_dir():
        index_path = index_path / "features.json"
    by_label = load_feature_index(index_path)
    if any(label is None for label in by_label):
        raise DataFormatError("feature index lacks labels; extract from a manifest")
    kind = "bernoulli" if cfg.feature_kind == "sparse" else "gaussian"
    recognizer, _ = train_recognizer(by_label, n_states=cfg.model.n_states,
                                     n_components=cfg.model.n_components, kind=kind,
                                     iterations=cfg.model.em_iterations, seed=cfg.seed)
    save_recognizer(args.out, recognizer)
    print(f"wrote {args.out} ({len(recognizer.labels)} word models)")
    return EXIT_OK


def cmd_recognize(args):
    from sparseasr.hmm import load_recognizer, recognize
    from sparseasr.mfcc import load_mfcc
    from sparseasr.projection import load_features

    recognizer = load_recognizer(args.models)
    paths = []
    p = Path(args.infile)
    if p.is_dir():
        index = json.loads((p / "features.json").read_text())
        paths = [p / item["feature"] for item in index]
    else:
        paths = [p]
    results = []
    for path in paths:
        if path.suffix == ".bfv":
            feats = load_features(path).to_dense()
        else:
            feats = load_mfcc(path).frames
        label, scores = recognize(recognizer, feats,
                                  algorithm="viterbi" if args.viterbi else "forward")
        results.append({"input": str(path), "label": label,
                        "scores": {k: float(v) for k, v in scores.items()}})
        print(f"{path}\t{label}")
    if args.out:
        Path(args.out).write_text(json.dumps(results, sort_keys=True, indent=1))
    return EXIT_OK


def cmd_evaluate(args):
    from sparseasr.harness import evaluate, load_manifest, parse_snr
    from sparseasr.hmm import load_recognizer
    from sparseasr.ica import load_hierarchy
    from sparseasr.pipeline import mfcc_extractor, sparse_extractor

    recognizer = load_recognizer(args.models)
    manifest = load_manifest(args.manifest)
    noises = [n.strip() for n in args.noise.split(",") if n.strip()]
    snrs = [parse_snr(s) for s in args.snr.split(",") if s.strip()]
    if recognizer.kind == "bernoulli":
        if not args.dict:
            raise _UsageError("binary-feature models need --dict")
        cfg = config_mod.preset("sparse-exp2")
        extractor = sparse_extractor(cfg, load_hierarchy(args.dict))
        system = args.system or "sparse"
    else:
        cfg = config_mod.preset("mfcc-baseline")
        extractor = mfcc_extractor(cfg)
        system = args.system or "mfcc"
    report = evaluate(recognizer, manifest, extractor, noises, snrs,
                      system=system, seed=args.seed)
    Path(args.out).write_text(report.to_json())
    if args.csv:
        report.write_csv(args.csv)
    for noise in noises:
        for snr in snrs:
            from sparseasr.harness import _snr_label

            print(f"{system} {noise} {_snr_label(snr)}: "
                  f"{report.rate(system, noise, snr):.1f}%")
    return EXIT_OK


def cmd_profile(args):
    from sparseasr.hmm import load_recognizer
    from sparseasr.ica import load_hierarchy
    from sparseasr.pipeline import mfcc_extractor, profile_systems, sparse_extractor

    systems = {}
    if args.sparse_models:
        if not args.dict:
            raise _UsageError("profiling the sparse system needs --dict")
        cfg = config_mod.preset("sparse-exp2")
        systems["sparse"] = (cfg, load_recognizer(args.sparse_models),
                             sparse_extractor(cfg, load_hierarchy(args.dict)))
    if args.mfcc_models:
        cfg = config_mod.preset("mfcc-baseline")
        systems["mfcc"] = (cfg, load_recognizer(args.mfcc_models),
                           mfcc_extractor(cfg))
    if not systems:
        raise _UsageError("profile needs --sparse-models and/or --mfcc-models")
    out = profile_systems(systems, args.manifest, None, limit=args.limit)
    Path(args.out).write_text(json.dumps(out, sort_keys=True, indent=1))
    for name, rt in out.items():
        stages = ", ".join(f"{s}: {v['factor']:.3f}x" for s, v in rt["stages"].items())
        print(f"{name}: global {rt['global']['factor']:.3f}x ({stages})")
    return EXIT_OK


def cmd_export_bases(args):
    from sparseasr.ica import bases_as_patches, load_hierarchy

    hierarchy = load_hierarchy(args.dict)
    patches = bases_as_patches(hierarchy)
    arrays = {f"level{h}_patches": p for h, p in enumerate(patches)}
    np.savez_compressed(args.out, **arrays)
    meta = {f"level{h}": {"k": int(p.shape[0]), "channels": int(p.shape[1]),
                          "frames": int(p.shape[2])}
            for h, p in enumerate(patches)}
    print(json.dumps(meta, sort_keys=True))
    return EXIT_OK


def build_parser():
    parser = _Parser(prog="sparseasr",
                     description="Sparse hierarchical auditory features and "
                                 "isolated word recognition")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-corpus", help="generate the synthetic pseudo-word corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--speakers", type=int, default=4)
    p.add_argument("--train", type=int, default=5, help="train utterances per speaker")
    p.add_argument("--test", type=int, default=5, help="test utterances per speaker")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_synth_corpus)

    p = sub.add_parser("train-dict", help="learn the dictionary hierarchy")
    p.add_argument("--config")
    p.add_argument("--preset", choices=sorted(config_mod.PRESETS))
    p.add_argument("--corpus", required=True, help="corpus manifest JSON")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_train_dict)

    p = sub.add_parser("extract", help="extract features for a WAV or manifest")
    p.add_argument("--dict", help="dictionary file for sparse features")
    p.add_argument("--mfcc", action="store_true", help="extract MFCC features instead")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--policy", default="top_p=0.1")
    p.set_defaults(fn=cmd_extract)

    p = sub.add_parser("train-model", help="train word HMMs on extracted features")
    p.add_argument("--features", required=True, help="extract output dir or index JSON")
    p.add_argument("--config")
    p.add_argument("--preset", choices=sorted(config_mod.PRESETS))
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_train_model)

    p = sub.add_parser("recognize", help="score feature files against word models")
    p.add_argument("--models", required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out")
    p.add_argument("--viterbi", action="store_true")
    p.set_defaults(fn=cmd_recognize)

    p = sub.add_parser("evaluate", help="recognition rates over a noise/SNR grid")
    p.add_argument("--models", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--noise", default="babble,volvo,white")
    p.add_argument("--snr", default="-5,0,10,20,40,clean")
    p.add_argument("--out", required=True)
    p.add_argument("--csv")
    p.add_argument("--dict")
    p.add_argument("--system")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("profile", help="real-time factors per processing stage")
    p.add_argument("--manifest", required=True)
    p.add_argument("--sparse-models")
    p.add_argument("--dict")
    p.add_argument("--mfcc-models")
    p.add_argument("--out", required=True)
    p.add_argument("--limit", type=int, default=None)
    p.set_defaults(fn=cmd_profile)

    p = sub.add_parser("export-bases", help="dump bases as cochleogram-shaped arrays")
    p.add_argument("--dict", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_export_bases)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigurationError,) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataFormatError, InvalidInputError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except SparseAsrError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

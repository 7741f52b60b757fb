import json

import pytest

from sparseasr.config import (
    EvaluationConfig,
    ExperimentConfig,
    HierarchyConfig,
    ModelConfig,
    TrainingConfig,
    mfcc_baseline,
    serialize,
)
from sparseasr.projection import LevelGeometry
from sparseasr.synth import CorpusSpec, synthesize_corpus


def tiny_sparse_config(seed=3, condition="clean"):
    """Downsized sparse system for fast integration tests."""
    levels = (
        LevelGeometry(level=0, k=8, l_c=32, l_t_ms=40.0, overlap_spectral=0.5,
                      overlap_temporal=0.5, max_examples=1500),
        LevelGeometry(level=1, k=12, m=2, n=2, overlap_spectral=0.25,
                      overlap_temporal=0.25, max_examples=800),
    )
    return ExperimentConfig(
        name="sparse-tiny", feature_kind="sparse", seed=seed,
        hierarchy=HierarchyConfig(levels=levels, top_p=0.1, feature_rate=100.0),
        model=ModelConfig(n_states=4, n_components=2, em_iterations=4),
        training=TrainingConfig(condition=condition),
        evaluation=EvaluationConfig(noises=("white",), snrs=("20", "clean")),
    )


def tiny_mfcc_config(seed=3):
    cfg = mfcc_baseline(seed=seed)
    return ExperimentConfig(
        name="mfcc-tiny", feature_kind="mfcc", seed=seed, frontend=cfg.frontend,
        mfcc=cfg.mfcc,
        model=ModelConfig(n_states=4, n_components=2, em_iterations=4),
        evaluation=EvaluationConfig(noises=("white",), snrs=("20", "clean")),
    )


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """3 classes x 2 speakers x (2 train + 1 test): 18 short files."""
    root = tmp_path_factory.mktemp("corpus")
    manifest = synthesize_corpus(root, CorpusSpec(
        classes=3, speakers=2, train_per_speaker=2, test_per_speaker=1, seed=9))
    return manifest


@pytest.fixture(scope="session")
def tiny_config_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "sparse-tiny.json"
    path.write_text(serialize(tiny_sparse_config()))
    return path

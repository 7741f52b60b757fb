import numpy as np
import pytest

from sparseasr.audio import load_wav
from sparseasr.harness import load_manifest
from sparseasr.pipeline import (
    mfcc_extractor,
    profile_systems,
    run_pipeline,
    sparse_extractor,
)
from tests.conftest import tiny_mfcc_config, tiny_sparse_config


@pytest.fixture(scope="module")
def sparse_run(tiny_corpus, tmp_path_factory):
    work = tmp_path_factory.mktemp("work_sparse")
    cfg = tiny_sparse_config()
    return cfg, work, run_pipeline(cfg, tiny_corpus, work, system="sparse")


class TestRunPipeline:
    def test_produces_all_artifacts(self, sparse_run):
        _, _, result = sparse_run
        for stage in ("dict", "features", "models", "report"):
            assert result.paths[stage].exists()
        assert "sparse" in result.report.rates

    def test_artifacts_record_config_hash_and_seed(self, sparse_run):
        import json

        from sparseasr.config import config_hash

        cfg, _, result = sparse_run
        meta = json.loads((result.paths["dict"].parent / "meta.json").read_text())
        assert meta["config_hash"] == config_hash(cfg)
        assert meta["seed"] == cfg.seed

    def test_rerun_hits_cache_and_is_bit_identical(self, tiny_corpus, sparse_run):
        cfg, work, first = sparse_run
        before = first.paths["report"].read_bytes()
        second = run_pipeline(cfg, tiny_corpus, work, system="sparse")
        assert all(second.cached.values())
        assert second.paths["report"].read_bytes() == before

    def test_cold_run_in_fresh_workdir_matches(self, tiny_corpus, sparse_run,
                                               tmp_path_factory):
        cfg, _, first = sparse_run
        other = tmp_path_factory.mktemp("work_sparse_cold")
        result = run_pipeline(cfg, tiny_corpus, other, system="sparse")
        assert not any(result.cached.values())
        assert result.paths["report"].read_bytes() == first.paths["report"].read_bytes()

    def test_mfcc_pipeline(self, tiny_corpus, tmp_path_factory):
        work = tmp_path_factory.mktemp("work_mfcc")
        cfg = tiny_mfcc_config()
        result = run_pipeline(cfg, tiny_corpus, work, system="mfcc")
        assert "dict" not in result.paths
        rate = result.report.rate("mfcc", "white", float("inf"))
        assert 0.0 <= rate <= 100.0

    def test_multicondition_training_stage(self, tiny_corpus, tmp_path_factory):
        work = tmp_path_factory.mktemp("work_mc")
        cfg = tiny_sparse_config(condition="multicondition")
        result = run_pipeline(cfg, tiny_corpus, work, system="sparse-mc")
        mc_dirs = list((work / "cache").glob("multicondition-*"))
        assert len(mc_dirs) == 1
        assert (mc_dirs[0] / "noise_assignment.json").exists()
        assert "sparse-mc" in result.report.rates


class TestExtractors:
    def test_sparse_extractor_shapes(self, tiny_corpus, sparse_run):
        cfg, _, result = sparse_run
        from sparseasr.ica import load_hierarchy

        hierarchy = load_hierarchy(result.paths["dict"])
        extractor = sparse_extractor(cfg, hierarchy)
        manifest = load_manifest(tiny_corpus)
        entry = manifest.subset("test")[0]
        feats = extractor(load_wav(manifest.resolve(entry)))
        assert feats.dtype == np.uint8
        plan = hierarchy.plan()
        assert feats.shape[1] == sum(plan.feature_dim())

    def test_mfcc_extractor_shapes(self, tiny_corpus):
        cfg = tiny_mfcc_config()
        extractor = mfcc_extractor(cfg)
        manifest = load_manifest(tiny_corpus)
        entry = manifest.subset("test")[0]
        feats = extractor(load_wav(manifest.resolve(entry)))
        assert feats.shape[1] == 39


class TestProfile:
    def test_profile_systems(self, tiny_corpus, sparse_run):
        cfg, _, result = sparse_run
        from sparseasr.hmm import load_recognizer
        from sparseasr.ica import load_hierarchy

        recognizer = load_recognizer(result.paths["models"])
        hierarchy = load_hierarchy(result.paths["dict"])
        out = profile_systems(
            {"sparse": (cfg, recognizer, sparse_extractor(cfg, hierarchy))},
            tiny_corpus, None, limit=2)
        assert "extraction" in out["sparse"]["stages"]
        assert "classification" in out["sparse"]["stages"]
        assert out["sparse"]["global"]["factor"] > 0

import json

import numpy as np
import pytest

from sparseasr.cli import main


@pytest.fixture(scope="module")
def cli_artifacts(tiny_corpus, tiny_config_file, tmp_path_factory):
    """Chained CLI runs: train-dict, extract, train-model."""
    root = tmp_path_factory.mktemp("cli")
    dict_path = root / "hierarchy.dict"
    assert main(["train-dict", "--config", str(tiny_config_file),
                 "--corpus", str(tiny_corpus), "--out", str(dict_path)]) == 0

    train_manifest = root / "train_manifest.json"
    entries = json.loads(tiny_corpus.read_text())
    corpus_dir = tiny_corpus.parent
    train = [dict(e, path=str(corpus_dir / e["path"]))
             for e in entries if e["split"] == "train"]
    train_manifest.write_text(json.dumps(train))

    feat_dir = root / "features"
    assert main(["extract", "--dict", str(dict_path), "--in", str(train_manifest),
                 "--out", str(feat_dir), "--policy", "top_p=0.1"]) == 0

    models = root / "models.whmm"
    assert main(["train-model", "--features", str(feat_dir), "--config",
                 str(tiny_config_file), "--out", str(models)]) == 0
    return {"root": root, "dict": dict_path, "features": feat_dir, "models": models}


class TestSynthCorpus:
    def test_creates_manifest_and_audio(self, tmp_path):
        out = tmp_path / "corpus"
        assert main(["synth-corpus", "--out", str(out), "--classes", "2",
                     "--speakers", "1", "--train", "1", "--test", "1",
                     "--seed", "4"]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert len(manifest) == 4
        for e in manifest:
            assert (out / e["path"]).exists()


class TestChain:
    def test_dictionary_written(self, cli_artifacts):
        from sparseasr.ica import load_hierarchy

        h = load_hierarchy(cli_artifacts["dict"])
        assert [d.k for d in h.levels] == [8, 12]

    def test_features_written(self, cli_artifacts):
        index = json.loads((cli_artifacts["features"] / "features.json").read_text())
        assert len(index) == 12
        assert all((cli_artifacts["features"] / i["feature"]).exists() for i in index)

    def test_recognize_runs(self, cli_artifacts, tmp_path, capsys):
        out = tmp_path / "rec.json"
        first = json.loads((cli_artifacts["features"] / "features.json").read_text())[0]
        feat = cli_artifacts["features"] / first["feature"]
        assert main(["recognize", "--models", str(cli_artifacts["models"]),
                     "--in", str(feat), "--out", str(out)]) == 0
        results = json.loads(out.read_text())
        assert results[0]["label"].startswith("word")
        printed = capsys.readouterr().out
        assert results[0]["label"] in printed

    def test_evaluate_writes_report(self, cli_artifacts, tiny_corpus, tmp_path):
        report = tmp_path / "report.json"
        csv = tmp_path / "report.csv"
        assert main(["evaluate", "--models", str(cli_artifacts["models"]),
                     "--manifest", str(tiny_corpus), "--dict",
                     str(cli_artifacts["dict"]), "--noise", "white",
                     "--snr", "20,clean", "--out", str(report),
                     "--csv", str(csv), "--system", "tiny"]) == 0
        raw = json.loads(report.read_text())
        assert "tiny" in raw["rates"]
        assert set(raw["rates"]["tiny"]["white"]) == {"20", "clean"}
        assert "system,noise,snr,rate_percent" in csv.read_text()

    def test_profile_orders_stages(self, cli_artifacts, tiny_corpus, tmp_path):
        out = tmp_path / "profile.json"
        assert main(["profile", "--manifest", str(tiny_corpus),
                     "--sparse-models", str(cli_artifacts["models"]),
                     "--dict", str(cli_artifacts["dict"]),
                     "--out", str(out), "--limit", "2"]) == 0
        prof = json.loads(out.read_text())
        assert {"extraction", "classification"} <= set(prof["sparse"]["stages"])

    def test_export_bases(self, cli_artifacts, tmp_path):
        out = tmp_path / "bases.npz"
        assert main(["export-bases", "--dict", str(cli_artifacts["dict"]),
                     "--out", str(out)]) == 0
        arrays = np.load(out)
        assert arrays["level0_patches"].shape == (8, 32, 40)
        assert arrays["level1_patches"].shape == (12, 64, 80)


class TestExitCodes:
    def test_usage_error_is_1(self):
        assert main(["train-dict", "--corpus", "x.json", "--out", "y"]) == 1

    def test_unknown_subcommand_is_1(self):
        assert main(["frobnicate"]) == 1

    def test_missing_data_is_2(self, tmp_path):
        assert main(["recognize", "--models", str(tmp_path / "none.whmm"),
                     "--in", str(tmp_path / "none.bfv")]) == 2

    def test_bad_manifest_is_2(self, tiny_config_file, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{")
        assert main(["train-dict", "--config", str(tiny_config_file),
                     "--corpus", str(bad), "--out", str(tmp_path / "d")]) == 2

    def test_conflicting_kind_is_1(self, tiny_corpus, tmp_path):
        from sparseasr.config import mfcc_baseline, save_config

        cfg_path = tmp_path / "m.json"
        save_config(cfg_path, mfcc_baseline())
        assert main(["train-dict", "--config", str(cfg_path),
                     "--corpus", str(tiny_corpus),
                     "--out", str(tmp_path / "d")]) == 1

import json

import numpy as np
import pytest

from incident_detect import cli
from incident_detect.data import Normalizer, SplitSpec, derive_seed, load_csv, split
from incident_detect.exceptions import TrainingDivergenceError

QUICK_GAN = ["--epochs", "2", "--noise-dim", "4", "--gen-hidden", "8", "--disc-hidden", "8", "--batch-size", "32"]
QUICK_CLF = ["--epochs", "3", "--d-model", "8", "--n-heads", "2", "--n-layers", "1", "--d-ff", "8"]


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def counts_1600_7240(tmp_path_factory):
    out = tmp_path_factory.mktemp("paper") / "data"
    assert run("gen-data", "--n-incident", 1600, "--n-non", 7240, "--seed", 7, "-o", out) == 0
    return out


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipe")
    assert run("gen-data", "--profile", "separated", "--n-incident", 150, "--n-non", 350, "--seed", 1, "-o", root / "d") == 0
    assert run("train-gan", "--data", root / "d/dataset.csv", *QUICK_GAN, "--seed", 1, "-o", root / "g") == 0
    assert run("augment", "--data", root / "d/dataset.csv", "--gan", root / "g/gan.json", "--ratio", "1:1", "--seed", 1, "-o", root / "a") == 0
    assert run("train-clf", "--data", root / "a/augmented.csv", *QUICK_CLF, "--seed", 1, "-o", root / "c") == 0
    assert run("evaluate", "--model", root / "c/classifier.json", "--data", root / "c/test.csv", "-o", root / "e") == 0
    # sanity classifier on the real separated rows only
    sanity = ["--epochs", 5, "--lr", 0.01, "--batch-size", 32, *QUICK_CLF[2:]]
    assert run("train-clf", "--data", root / "d/dataset.csv", *sanity, "--seed", 1, "-o", root / "c0") == 0
    assert run("evaluate", "--model", root / "c0/classifier.json", "--data", root / "c0/test.csv", "-o", root / "e0") == 0
    return root


class TestGenData:
    def test_counts_and_created_dir(self, counts_1600_7240):
        text = (counts_1600_7240 / "dataset.csv").read_text()
        assert len(text.splitlines()) == 1 + 8840
        truth = json.loads((counts_1600_7240 / "ground_truth.json").read_text())
        assert truth["seed"] == 7 and "config_hash" in truth

    def test_byte_identical(self, counts_1600_7240, tmp_path):
        assert run("gen-data", "--n-incident", 1600, "--n-non", 7240, "--seed", 7, "-o", tmp_path) == 0
        assert (tmp_path / "dataset.csv").read_bytes() == (counts_1600_7240 / "dataset.csv").read_bytes()

    def test_manifest(self, counts_1600_7240):
        manifest = json.loads((counts_1600_7240 / "manifest-gen-data.json").read_text())
        assert manifest["seed"] == 7
        files = {o["file"] for o in manifest["outputs"]}
        assert files == {"dataset.csv", "ground_truth.json"}
        assert manifest["stage_seeds"]["data"] == derive_seed(7, "data")


class TestConfig:
    def test_config_file_and_flag_precedence(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"n_incident": 5, "n_non": 9, "seed": 4}))
        assert run("gen-data", "--config", cfg, "--n-non", 11, "-o", tmp_path / "o") == 0
        table = load_csv(tmp_path / "o/dataset.csv")
        assert (table.n_incident, table.n_non_incident) == (5, 11)
        assert json.loads((tmp_path / "o/ground_truth.json").read_text())["seed"] == 4

    def test_unknown_key(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"n_incidents": 5}))
        assert run("gen-data", "--config", cfg, "-o", tmp_path / "o") == 1
        assert "n_incidents" in capsys.readouterr().err
        assert not (tmp_path / "o").exists()

    def test_usage_errors_exit_one(self, tmp_path):
        assert run("gen-data", "--bogus") == 1
        assert run("gen-data", "--n-incident", "many", "-o", tmp_path) == 1
        assert run("train-gan", "-o", tmp_path) == 1

    def test_hash_ignores_paths(self):
        a = cli.resolve_config("evaluate", {"model": "m", "data": "d", "output": "x"})
        b = cli.resolve_config("evaluate", {"model": "m2", "data": "d2", "output": "y"})
        assert cli.config_hash(a) == cli.config_hash(b)
        c = cli.resolve_config("evaluate", {"model": "m", "data": "d", "output": "x", "threshold": "0.4"})
        assert cli.config_hash(a) != cli.config_hash(c)


class TestTrainGan:
    def test_too_few_incidents_leaves_nothing(self, tmp_path, capsys):
        assert run("gen-data", "--n-incident", 100, "--n-non", 300, "-o", tmp_path / "d") == 0
        assert run("train-gan", "--data", tmp_path / "d/dataset.csv", "--batch-size", 64, "-o", tmp_path / "g") == 1
        assert "incident rows" in capsys.readouterr().err
        assert not (tmp_path / "g").exists()

    def test_history_one_row_per_epoch(self, pipeline):
        lines = (pipeline / "g/gan_history.csv").read_text().splitlines()
        assert lines[0] == "epoch,loss_d,loss_g,mean_d_real,mean_d_fake"
        assert len(lines) == 1 + 2

    def test_trains_on_train_split_incidents_only(self, pipeline):
        gan = json.loads((pipeline / "g/gan.json").read_text())
        table = load_csv(pipeline / "d/dataset.csv")
        train, _ = split(table, SplitSpec(0.6, True, derive_seed(1, "split")))
        assert gan["n_training_rows"] == train.n_incident
        expected = Normalizer("minmax").fit(train.incidents())
        assert gan["normalizer"]["center"] == expected.center_.tolist()


class TestAugment:
    @pytest.mark.parametrize("ratio,k", [("1:4", 210), ("1:1", 5640)])
    def test_ratio_counts(self, counts_1600_7240, pipeline, tmp_path, ratio, k):
        # the pipeline GAN has the same 7 columns, which is all augment needs
        out = tmp_path / "a"
        assert run("augment", "--data", counts_1600_7240 / "dataset.csv", "--gan", pipeline / "g/gan.json", "--ratio", ratio, "-o", out) == 0
        assert json.loads((out / "augmentation.json").read_text())["synthetic_rows"] == k
        table = load_csv(out / "augmented.csv")
        assert len(table) == 8840 + k
        assert table.synthetic.tolist() == [0] * 8840 + [1] * k
        original = load_csv(counts_1600_7240 / "dataset.csv")
        assert table.take(np.arange(8840)).equals(original)

    def test_bad_ratio(self, pipeline, tmp_path):
        assert run("augment", "--data", pipeline / "d/dataset.csv", "--gan", pipeline / "g/gan.json", "--ratio", "1:0", "-o", tmp_path) == 1


class TestTrainClf:
    def test_same_seed_identical_checkpoint(self, pipeline, tmp_path):
        assert run("train-clf", "--data", pipeline / "a/augmented.csv", *QUICK_CLF, "--seed", 1, "-o", tmp_path) == 0
        assert (tmp_path / "classifier.json").read_bytes() == (pipeline / "c/classifier.json").read_bytes()

    def test_no_leakage(self, pipeline):
        table = load_csv(pipeline / "a/augmented.csv")
        seed = derive_seed(1, "split")
        train_real, test_real = split(table.real_rows(), SplitSpec(0.6, True, seed))
        synth_train, _ = split(table.synthetic_rows(), SplitSpec(0.6, False, seed))
        train = train_real.append(synth_train)
        ckpt = json.loads((pipeline / "c/classifier.json").read_text())
        assert ckpt["normalizer"]["center"] == Normalizer("zscore").fit(train.features).center_.tolist()
        test = load_csv(pipeline / "c/test.csv")
        assert test.equals(test_real)
        assert not test.synthetic.any()
        assert ckpt["n_train"] == len(train) and ckpt["n_test"] == len(test)

    def test_history(self, pipeline):
        assert (pipeline / "c/clf_history.csv").read_text().splitlines()[0] == "epoch,loss"

    def test_divergence_exit_code(self, pipeline, tmp_path, monkeypatch, capsys):
        def boom(*a, **k):
            raise TrainingDivergenceError("classifier training diverged in epoch 2", 2)

        monkeypatch.setattr(cli, "train_classifier", boom)
        assert run("train-clf", "--data", pipeline / "d/dataset.csv", "-o", tmp_path / "c") == 3
        assert "epoch 2" in capsys.readouterr().err
        assert not (tmp_path / "c").exists()


class TestEvaluate:
    def test_separated_data_perfect(self, pipeline):
        report = json.loads((pipeline / "e0/evaluation.json").read_text())
        assert (report["dr"], report["far_paper"], report["far_conventional"], report["cr"], report["auc"]) == (1.0, 0.0, 0.0, 1.0, 1.0)
        assert report["seed"] == 0 and len(report["config_hash"]) == 64
        assert report["eval_wall_clock_seconds"] is None
        assert (pipeline / "e/roc.csv").read_text().startswith("fpr,tpr\n")

    def test_timing_flag(self, pipeline, tmp_path):
        assert run("evaluate", "--model", pipeline / "c/classifier.json", "--data", pipeline / "c/test.csv", "--timing", "-o", tmp_path) == 0
        assert json.loads((tmp_path / "evaluation.json").read_text())["eval_wall_clock_seconds"] > 0

    def test_single_class_exit_two(self, pipeline, tmp_path, capsys):
        test = load_csv(pipeline / "c/test.csv")
        negatives = tmp_path / "neg.csv"
        negatives.write_text("\n".join(
            [",".join(test.feature_names) + ",label"]
            + [",".join(map(repr, row.tolist())) + ",0" for row in test.features[test.labels == 0][:20]]
        ) + "\n")
        assert run("evaluate", "--model", pipeline / "c/classifier.json", "--data", negatives, "-o", tmp_path / "e") == 2
        assert "undefined" in capsys.readouterr().err
        report = json.loads((tmp_path / "e/evaluation.json").read_text())
        assert report["dr"] is None and report["auc"] is None

    def test_far_mode(self, pipeline, tmp_path):
        assert run("evaluate", "--model", pipeline / "c/classifier.json", "--data", pipeline / "c/test.csv", "--far-mode", "conventional", "-o", tmp_path) == 0
        assert json.loads((tmp_path / "evaluation.json").read_text())["far_primary"] == "conventional"
        assert run("evaluate", "--model", pipeline / "c/classifier.json", "--data", pipeline / "c/test.csv", "--far-mode", "x", "-o", tmp_path / "b") == 1


class TestDiagnose:
    def test_self_comparison(self, pipeline, tmp_path):
        data = pipeline / "d/dataset.csv"
        assert run("diagnose", "--real", data, "--synthetic", data, "-o", tmp_path) == 0
        report = json.loads((tmp_path / "distribution.json").read_text())
        assert set(report["ks_per_feature"].values()) == {0.0}
        names = load_csv(data).feature_names
        for name in names:
            assert (tmp_path / f"ecdf_{name}.csv").exists() and (tmp_path / f"kde_{name}.csv").exists()
        sources = {(r["feature"], r["source"]) for r in report["summary"]}
        assert ("all_features", "synthetic") in sources
        assert {"median", "mean", "sd"} <= set(report["summary"][0])

    def test_augmented_file(self, pipeline, tmp_path):
        assert run("diagnose", "--data", pipeline / "a/augmented.csv", "-o", tmp_path) == 0
        report = json.loads((tmp_path / "distribution.json").read_text())
        table = load_csv(pipeline / "a/augmented.csv")
        assert report["n_real"] == table.real_rows().n_incident
        assert report["n_synthetic"] == int(table.synthetic.sum())

    def test_needs_inputs(self, tmp_path):
        assert run("diagnose", "-o", tmp_path) == 1


def test_module_entry_point():
    import subprocess
    import sys

    proc = subprocess.run([sys.executable, "-m", "incident_detect", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.strip()

import json
import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np
import pytest

from facepipe.cli import main
from facepipe.dataset import FoldPlan, filter_single_label, parse_manifest
from facepipe.image import read_png

from corpus import write_face_corpus

FAST = ["--size", "16", "--bs", "8", "--epochs-a", "1", "--epochs-b", "2",
        "--k", "2", "--seed", "0", "--lr", "0.1"]


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture
def corpus(tmp_path):
    manifest, images = write_face_corpus(tmp_path / "corpus", n=12, seed=13)
    return manifest, images, tmp_path / "out"


def read_bytes_tree(root: Path) -> dict:
    return {
        str(p.relative_to(root)): p.read_bytes()
        for p in sorted(root.rglob("*")) if p.is_file()
    }


class TestNormalize:
    def test_single_sample_outputs(self, tmp_path):
        manifest, images = write_face_corpus(tmp_path / "c", n=1, seed=1)
        out = tmp_path / "out"
        assert run("normalize", "--manifest", manifest, "--images", images,
                   "--out", out, "--size", 32) == 0
        for suffix in ("_norm", "_norm_top", "_norm_bottom"):
            path = out / "normalized" / f"face0000{suffix}.png"
            assert path.exists()
            assert read_png(path).shape == (32, 32, 3)

    def test_corrupted_image_partial_success(self, corpus, capsys):
        manifest, images, out = corpus
        (images / "face0003.png").write_bytes(b"not a png")
        assert run("normalize", "--manifest", manifest, "--images", images,
                   "--out", out, "--size", 16) == 2
        err = capsys.readouterr().err
        assert "s0003" in err
        # the other 11 samples still produced output
        assert len(list((out / "normalized").glob("*_norm.png"))) == 11

    def test_rerun_bit_identical(self, corpus):
        manifest, images, out = corpus
        assert run("normalize", "--manifest", manifest, "--images", images,
                   "--out", out, "--size", 16) == 0
        first = read_bytes_tree(out)
        assert run("normalize", "--manifest", manifest, "--images", images,
                   "--out", out, "--size", 16) == 0
        assert read_bytes_tree(out) == first

    def test_missing_geometry_policy(self, tmp_path, capsys):
        manifest = tmp_path / "m.csv"
        manifest.write_text(
            "id,image_path,labels,lx,ly,rx,ry,nx,ny,bx,by,bw,bh\n"
            "a,missing.png,Fear,,,,,,,,,,\n",
            encoding="utf-8",
        )
        out = tmp_path / "out"
        # without the flag: counted as a failure
        assert run("normalize", "--manifest", manifest, "--images", tmp_path,
                   "--out", out) == 2
        # with the flag: skipped, exit 0
        assert run("normalize", "--manifest", manifest, "--images", tmp_path,
                   "--out", out, "--skip-missing") == 0
        assert "1 skipped" in capsys.readouterr().out


class TestMask:
    def test_masks_directory(self, tmp_path, random_image):
        from facepipe.image import write_png
        src = tmp_path / "imgs"
        src.mkdir()
        img = random_image(8, 8)
        write_png(img, src / "a.png")
        out = tmp_path / "masked"
        assert run("mask", "--images", src, "--out", out, "--condition", "top") == 0
        masked = read_png(out / "a_top.png")
        assert not masked[4:].any()
        assert np.array_equal(masked[:4], img[:4])

    def test_bad_condition(self, tmp_path):
        assert run("mask", "--images", tmp_path, "--out", tmp_path / "o",
                   "--condition", "full") == 1


class TestSplit:
    def test_deterministic_files(self, corpus):
        manifest, _, out = corpus
        assert run("split", "--manifest", manifest, "--out", out, "--k", 2, "--seed", 5) == 0
        first = (out / "folds.json").read_bytes()
        assert run("split", "--manifest", manifest, "--out", out, "--k", 2, "--seed", 5) == 0
        assert (out / "folds.json").read_bytes() == first

    def test_k_one_rejected(self, corpus):
        manifest, _, out = corpus
        assert run("split", "--manifest", manifest, "--out", out, "--k", 1) == 1

    def test_fold_class_balance_from_file(self, corpus):
        manifest, _, out = corpus
        assert run("split", "--manifest", manifest, "--out", out, "--k", 3, "--seed", 2) == 0
        plan = FoldPlan.from_json((out / "folds.json").read_text())
        filtered = filter_single_label(parse_manifest(manifest))
        for label in filtered.ordered_classes():
            ids = [r.id for r in filtered.records if r.single_label is label]
            sizes = [sum(1 for i in ids if plan.assignment[i] == f) for f in range(3)]
            assert max(sizes) - min(sizes) <= 1


class TestTrainEval:
    def prepare(self, corpus):
        manifest, images, out = corpus
        assert run("normalize", "--manifest", manifest, "--images", images,
                   "--out", out, "--size", 16) == 0
        assert run("split", "--manifest", manifest, "--out", out, "--k", 2, "--seed", 0) == 0
        return manifest, out

    def test_train_then_eval_artifacts(self, corpus):
        manifest, out = self.prepare(corpus)
        assert run("train", "--manifest", manifest, "--out", out,
                   "--condition", "full", *FAST) == 0
        pred = out / "predictions_full.csv"
        assert pred.exists()
        lines = pred.read_text().strip().split("\n")
        assert lines[0] == "id,true,predicted"
        assert len(lines) == 13
        assert (out / "history_full_fold0.csv").exists()
        assert (out / "history_full_fold1.csv").exists()

        assert run("eval", "--manifest", manifest, "--out", out,
                   "--condition", "full") == 0
        report = json.loads((out / "report_full.json").read_text())
        assert report["label"] == "full"
        assert 0.0 <= report["accuracy"] <= 1.0
        csv_header = (out / "report_full.csv").read_text().split("\n")[0]
        assert csv_header == ("label,accuracy,Happiness,Sadness,"
                              "balanced_accuracy,mean_sensitivity,sensitivity_sd")
        svg_root = ET.parse(out / "chart_full.svg").getroot()
        groups = [g for g in svg_root.iter("{http://www.w3.org/2000/svg}g")
                  if g.get("class") == "bar-group"]
        assert len(groups) == 3  # 2 classes + mean

    def test_train_requires_fold_plan(self, corpus):
        manifest, images, out = corpus
        assert run("normalize", "--manifest", manifest, "--images", images,
                   "--out", out, "--size", 16) == 0
        assert run("train", "--manifest", manifest, "--out", out, *FAST) == 1

    def test_eval_requires_predictions(self, corpus):
        manifest, out = self.prepare(corpus)
        assert run("eval", "--manifest", manifest, "--out", out,
                   "--condition", "top") == 1

    def test_train_requires_normalized_images(self, corpus):
        manifest, images, out = corpus
        assert run("split", "--manifest", manifest, "--out", out, "--k", 2) == 0
        assert run("train", "--manifest", manifest, "--out", out, *FAST) == 1


class TestReport:
    def eval_full(self, corpus):
        manifest, images, out = corpus
        assert run("normalize", "--manifest", manifest, "--images", images,
                   "--out", out, "--size", 16) == 0
        assert run("split", "--manifest", manifest, "--out", out, "--k", 2, "--seed", 0) == 0
        assert run("train", "--manifest", manifest, "--out", out,
                   "--condition", "full", *FAST) == 0
        assert run("eval", "--manifest", manifest, "--out", out,
                   "--condition", "full") == 0
        return manifest, out

    def test_single_report(self, corpus):
        _, out = self.eval_full(corpus)
        assert run("report", "--out", out, out / "report_full.json") == 0
        lines = (out / "summary.csv").read_text().strip().split("\n")
        assert len(lines) == 2
        assert (out / "summary.txt").exists()

    def test_round_trip_fields(self, corpus):
        _, out = self.eval_full(corpus)
        assert run("report", "--out", out, out / "report_full.json") == 0
        source = json.loads((out / "report_full.json").read_text())
        header, row = (out / "summary.csv").read_text().strip().split("\n")
        parsed = dict(zip(header.split(","), row.split(",")))
        assert float(parsed["accuracy"]) == source["accuracy"]
        assert float(parsed["mean_sensitivity"]) == source["mean_sensitivity"]
        assert float(parsed["sensitivity_sd"]) == source["sensitivity_sd"]
        assert float(parsed["Happiness"]) == source["per_class_sensitivity"]["Happiness"]

    def test_missing_file(self, tmp_path):
        assert run("report", "--out", tmp_path, tmp_path / "nope.json") == 1


class TestConfigFile:
    def test_config_and_flag_precedence(self, corpus, tmp_path):
        manifest, _, out = corpus
        config = tmp_path / "cfg.json"
        config.write_text(json.dumps({"k": 3, "seed": 9}), encoding="utf-8")
        assert run("split", "--config", config, "--manifest", manifest, "--out", out) == 0
        plan = FoldPlan.from_json((out / "folds.json").read_text())
        assert plan.k == 3 and plan.seed == 9
        # explicit flag wins over the config file
        assert run("split", "--config", config, "--manifest", manifest,
                   "--out", out, "--k", 2) == 0
        plan = FoldPlan.from_json((out / "folds.json").read_text())
        assert plan.k == 2 and plan.seed == 9

    def test_unknown_config_key(self, corpus, tmp_path):
        manifest, _, out = corpus
        config = tmp_path / "cfg.json"
        config.write_text(json.dumps({"bogus": 1}), encoding="utf-8")
        assert run("split", "--config", config, "--manifest", manifest, "--out", out) == 1


class TestRunAll:
    def test_chain_produces_all_artifacts(self, corpus):
        manifest, images, out = corpus
        assert run("run-all", "--manifest", manifest, "--images", images,
                   "--out", out, *FAST) == 0
        for condition in ("full", "top", "bottom"):
            assert (out / f"predictions_{condition}.csv").exists()
            assert (out / f"report_{condition}.json").exists()
            assert (out / f"report_{condition}.csv").exists()
            assert (out / f"chart_{condition}.svg").exists()
        assert (out / "folds.json").exists()
        assert (out / "summary.csv").exists()
        assert (out / "summary.txt").exists()
        assert (out / "chart_all.svg").exists()
        summary_lines = (out / "summary.csv").read_text().strip().split("\n")
        assert len(summary_lines) == 4  # header + 3 conditions

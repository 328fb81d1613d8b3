import csv
import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from segrisk import __version__, training
from segrisk.classify import load_model
from segrisk.cli import digest, main
from segrisk.features import BACKGROUND, TUMOR
from segrisk.io import write_pgm, write_tensor

TINY = ["--lr", "0.3", "--max-epochs", "2", "--iterations", "2", "--batch-size", "2"]


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth")
    rc = main(["gen-synth", "--out", str(root / "d"), "--seed", "3", "--tiles", "4", "--val-tiles", "2",
               "--test-tiles", "2", "--classes", "4", "--size", "32", "--cohort", "24"])
    assert rc == 0
    return root / "d"


def two_fragment_slide():
    seg = np.full((80, 200), BACKGROUND, np.uint8)
    seg[10:60, 10:70] = 5
    seg[10:60, 120:190] = 0
    seg[20:30, 20:23] = TUMOR  # 30 pixels, kept
    seg[40:42, 130:137] = TUMOR  # 14 pixels, removed
    return seg


class TestGenSynth:
    def test_layout(self, dataset):
        assert len(list((dataset / "train").glob("*.rgb.tns"))) == 4
        assert len(list((dataset / "train").glob("*.mask.pgm"))) == 4
        assert len(list((dataset / "slides").glob("*.mask.pgm"))) == 24
        rows = read_rows(dataset / "labels.csv")
        assert rows[0] == ["slide_id", "grade"] and len(rows) == 25

    def test_rerun_identical(self, tmp_path, monkeypatch):
        hashes = []
        for name in ("a", "b"):
            (tmp_path / name).mkdir()
            monkeypatch.chdir(tmp_path / name)
            assert main(["gen-synth", "--out", "out", "--seed", "9", "--tiles", "2", "--size", "32",
                         "--cohort", "2"]) == 0
            manifest = (tmp_path / name / "out" / "manifest.json").read_bytes()
            hashes.append((digest(Path("out"))["sha256"], manifest))
        assert hashes[0] == hashes[1]

    def test_nothing_requested(self, tmp_path, capsys):
        assert main(["gen-synth", "--out", str(tmp_path / "x")]) == 1
        assert capsys.readouterr().err.startswith("error:")


class TestManifest:
    def test_contents(self, dataset):
        m = json.loads((dataset / "manifest.json").read_text())
        assert m["command"] == "gen-synth" and m["tool_version"] == __version__
        assert m["flags"]["seed"] == 3 and m["flags"]["size"] == 32
        assert "time" not in json.dumps(m).lower()
        for rel, sha in list(m["outputs"].items())[:5]:
            assert hashlib.sha256((dataset / rel).read_bytes()).hexdigest() == sha


class TestTrain:
    def test_outputs(self, dataset, tmp_path):
        out = tmp_path / "m"
        assert main(["train", "--loss", "lovasz", "--data", str(dataset), "--out", str(out)] + TINY) == 0
        model = json.loads((out / "model.json").read_text())
        assert set(model) == {"version", "k", "H", "C", "layers"}
        rows = read_rows(out / "trainlog.csv")
        assert rows[0] == ["epoch", "train_loss", "val_loss", "val_dice", "lr"] and len(rows) == 4
        m = json.loads((out / "manifest.json").read_text())
        assert m["flags"]["lr"] == 0.3 and m["inputs"]["train"]["sha256"]

    def test_focal_flags(self, dataset, tmp_path):
        argv = ["train", "--loss", "focal", "--gamma", "2", "--alpha", "0.25", "--data", str(dataset),
                "--out", str(tmp_path / "f")]
        assert main(argv + TINY) == 0

    def test_bitempered_one_one_equals_cc(self, dataset, tmp_path):
        logs = {}
        for loss in ("cc", "bitempered"):
            out = tmp_path / loss
            assert main(["train", "--loss", loss, "--t1", "1", "--t2", "1", "--data", str(dataset),
                         "--out", str(out)] + TINY) == 0
            logs[loss] = np.array([[float(v) for v in r] for r in read_rows(out / "trainlog.csv")[1:]])
        np.testing.assert_allclose(logs["bitempered"], logs["cc"], atol=1e-6, rtol=0)

    def test_missing_data(self, tmp_path):
        assert main(["train", "--data", str(tmp_path / "none"), "--val", str(tmp_path), "--out",
                     str(tmp_path / "o")]) == 1

    def test_divergence_exit_code(self, dataset, tmp_path, monkeypatch, capsys):
        monkeypatch.setattr(training, "_batch_loss", lambda *a: (float("inf"), None, None))
        assert main(["train", "--data", str(dataset), "--out", str(tmp_path / "o")] + TINY) == 2
        assert "non-finite loss" in capsys.readouterr().err


class TestCompareLosses:
    def test_table_shape(self, dataset, tmp_path):
        out = tmp_path / "cmp"
        assert main(["compare-losses", "--data", str(dataset), "--out", str(out), "--noise", "0.1"] + TINY) == 0
        rows = read_rows(out / "table.csv")
        assert rows[0] == ["class", "CC", "Focal", "Bi-tempered", "Lovasz"]
        assert len(rows) == 16 and rows[-1][0] == "Average"
        values = [float(v) for r in rows[1:] for v in r[1:] if v]
        assert values and all(0.0 <= v <= 1.0 for v in values)
        assert all(v == "" for r in rows[5:15] for v in r[1:])  # classes absent from the 4-class data
        report = json.loads((out / "report.json").read_text())
        assert report["label_noise_rate"] == 0.1 and report["evaluated_on"] == "test"
        assert "bitempered_minus_cc_mean_dice" in report
        for kind in ("cc", "focal", "bitempered", "lovasz"):
            assert (out / kind / "model.json").exists()

    def test_unknown_loss(self, dataset, tmp_path):
        assert main(["compare-losses", "--data", str(dataset), "--out", str(tmp_path), "--losses", "cc,hinge"]) == 1


class TestFeatures:
    def test_fragments_and_small_cluster(self, tmp_path):
        d = tmp_path / "maps"
        d.mkdir()
        write_pgm(two_fragment_slide(), d / "s1.mask.pgm")
        assert main(["features", "--segmaps", str(d), "--out", str(tmp_path / "f")]) == 0
        rows = read_rows(tmp_path / "f" / "features.csv")
        assert rows[0][:3] == ["slide_id", "frag_id", "h0"] and rows[0][-4:] == [
            "n_clusters", "mean_area", "min_area", "max_area"]
        assert [r[1] for r in rows[1:]] == ["0", "1", "all"]
        by_frag = {r[1]: r for r in rows[1:]}
        assert by_frag["all"][16:] == ["1", "30.000000", "30.000000", "30.000000"]
        assert by_frag["1"][16] == "0"
        assert read_rows(tmp_path / "f" / "slides.csv")[1] == by_frag["all"]

    def test_29_pixel_cluster_absent(self, tmp_path):
        seg = np.full((20, 40), 5, np.uint8)
        seg[2, 2:31] = TUMOR
        d = tmp_path / "maps"
        d.mkdir()
        write_pgm(seg, d / "s.mask.pgm")
        assert main(["features", "--segmaps", str(d), "--pixel-area", "1.0", "--out", str(tmp_path / "f")]) == 0
        row = read_rows(tmp_path / "f" / "slides.csv")[1]
        assert row[2 + TUMOR] == "0.0" and row[16] == "0"

    def test_unreadable_map_continues(self, tmp_path, capsys):
        d = tmp_path / "maps"
        d.mkdir()
        write_pgm(two_fragment_slide(), d / "good.mask.pgm")
        (d / "bad.mask.pgm").write_bytes(b"P5 garbage")
        assert main(["features", "--segmaps", str(d), "--out", str(tmp_path / "f")]) == 1
        assert "bad.mask.pgm" in capsys.readouterr().err
        assert [r[0] for r in read_rows(tmp_path / "f" / "slides.csv")[1:]] == ["good"]

    def test_worst_grade_labels(self, tmp_path):
        d = tmp_path / "maps"
        d.mkdir()
        write_pgm(two_fragment_slide(), d / "s1.mask.pgm")
        labels = tmp_path / "frag.csv"
        labels.write_text("slide_id,frag_id,grade\ns1,0,hyperplastic\ns1,1,lgd\ns2,0,other\n")
        assert main(["features", "--segmaps", str(d), "--fragment-labels", str(labels),
                     "--out", str(tmp_path / "f")]) == 0
        assert read_rows(tmp_path / "f" / "slide_labels.csv") == [["slide_id", "grade"], ["s1", "2"], ["s2", "0"]]

    def test_rerun_identical(self, dataset, tmp_path):
        for name in ("a", "b"):
            assert main(["features", "--segmaps", str(dataset / "slides"), "--out", str(tmp_path / name)]) == 0
        assert (tmp_path / "a" / "features.csv").read_bytes() == (tmp_path / "b" / "features.csv").read_bytes()


@pytest.fixture(scope="module")
def features(dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("feat")
    assert main(["features", "--segmaps", str(dataset / "slides"), "--out", str(out)]) == 0
    return out / "features.csv"


class TestClassify:
    def test_report(self, features, dataset, tmp_path):
        out = tmp_path / "c"
        assert main(["classify", "--features", str(features), "--labels", str(dataset / "labels.csv"),
                     "--trees", "20", "--folds", "3", "--out", str(out)]) == 0
        report = json.loads((out / "cv_report.json").read_text())
        assert [a["class"] for a in report["auc"]] == ["HGD/tumor", "low-grade dysplasia", "hyperplasia", "other"]
        assert np.array(report["confusion_matrix"]).shape == (4, 4)
        assert len(report["predictions"]) == 24
        assert (out / "summary.txt").read_text().startswith("HGD/tumor: AUC of ")
        model = load_model(out / "model.json")
        assert model.named_steps["forest"].n_estimators == 20

    def test_join_error_lists_offenders(self, features, tmp_path, capsys):
        labels = tmp_path / "labels.csv"
        labels.write_text("slide_id,grade\nslide_00000,1\nghost_slide,2\n")
        assert main(["classify", "--features", str(features), "--labels", str(labels), "--out", str(tmp_path)]) == 1
        err = capsys.readouterr().err
        assert "ghost_slide" in err and "slide_00001" in err

    def test_more_folds_than_slides(self, tmp_path):
        header = "slide_id,frag_id," + ",".join(f"h{i}" for i in range(14)) + ",n_clusters,mean_area,min_area,max_area\n"
        feats = tmp_path / "f.csv"
        feats.write_text(header + "".join(f"s{i},all," + ",".join(["0.1"] * 18) + "\n" for i in range(4)))
        labels = tmp_path / "l.csv"
        labels.write_text("slide_id,grade\n" + "".join(f"s{i},{i}\n" for i in range(4)))
        assert main(["classify", "--features", str(feats), "--labels", str(labels), "--folds", "5",
                     "--out", str(tmp_path / "o")]) == 1

    def test_missing_columns(self, tmp_path):
        bad = tmp_path / "f.csv"
        bad.write_text("slide_id,x\ns,1\n")
        assert main(["classify", "--features", str(bad), "--labels", str(bad), "--out", str(tmp_path)]) == 1


class TestMetrics:
    def run(self, capsys, argv):
        assert main(["metrics"] + argv) == 0
        return json.loads(capsys.readouterr().out)

    def test_identical_maps(self, tmp_path, capsys):
        seg = np.arange(12, dtype=np.uint8).reshape(3, 4) % 5
        write_pgm(seg, tmp_path / "a.pgm")
        report = self.run(capsys, ["--pred", str(tmp_path / "a.pgm"), "--ref", str(tmp_path / "a.pgm")])
        assert report["mean"] == 1.0 and report["metric"] == "dice"

    def test_kappa(self, tmp_path, capsys):
        (tmp_path / "a.txt").write_text("0,1,2,3,3\n")
        report = self.run(capsys, ["--pred", str(tmp_path / "a.txt"), "--ref", str(tmp_path / "a.txt"),
                                   "--metric", "kappa"])
        assert report["value"] == 1.0

    def test_lumen_relabel(self, tmp_path, capsys):
        ref = np.zeros((2, 2), np.uint8)
        pred = ref.copy()
        pred[0, 0] = BACKGROUND
        rgb = np.zeros((2, 2, 3), np.float32)
        rgb[0, 0] = 0.99
        write_pgm(ref, tmp_path / "ref.pgm")
        write_pgm(pred, tmp_path / "pred.pgm")
        write_tensor(rgb, tmp_path / "rgb.tns")
        base = ["--pred", str(tmp_path / "pred.pgm"), "--ref", str(tmp_path / "ref.pgm"), "--metric", "f1"]
        plain = self.run(capsys, base)
        relabelled = self.run(capsys, base + ["--lumen-relabel", str(tmp_path / "rgb.tns")])
        assert plain["mean"] < 1.0 and relabelled["mean"] == 1.0

    def test_shape_mismatch(self, tmp_path):
        write_pgm(np.zeros((2, 2), np.uint8), tmp_path / "a.pgm")
        write_pgm(np.zeros((2, 3), np.uint8), tmp_path / "b.pgm")
        assert main(["metrics", "--pred", str(tmp_path / "a.pgm"), "--ref", str(tmp_path / "b.pgm")]) == 1

    def test_writes_out(self, tmp_path, capsys):
        write_pgm(np.zeros((2, 2), np.uint8), tmp_path / "a.pgm")
        self.run(capsys, ["--pred", str(tmp_path / "a.pgm"), "--ref", str(tmp_path / "a.pgm"),
                          "--out", str(tmp_path / "m.json")])
        assert json.loads((tmp_path / "m.json").read_text())["mean"] == 1.0

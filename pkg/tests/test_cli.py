"""End-to-end command-line workflows and exit-code contracts."""

import json

import numpy as np
import pytest

from hmgp.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, main
from hmgp.config import SCHEMA_VERSION
from hmgp.dataio import read_matrix


def write_config(path, **overrides):
    doc = {
        "schema_version": SCHEMA_VERSION,
        "variant": "m-SimGP",
        "q": 2,
        "M": 32,
        "epochs": 1,
        "inference_iters": 30,
    }
    doc.update(overrides)
    path.write_text(json.dumps(doc))
    return path


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    code = main(
        [
            "synth",
            "--n", "60", "--q", "2", "--d1", "6", "--d2", "5",
            "--seed", "0", "--noise", "0.05", "--groups", "4",
            "--separation", "2.0", "--out-dir", str(d),
        ]
    )
    assert code == EXIT_OK
    return d


@pytest.fixture(scope="module")
def trained_dir(data_dir, tmp_path_factory):
    d = tmp_path_factory.mktemp("run")
    cfg = write_config(d / "cfg.json")
    code = main(
        [
            "train",
            "--config", str(cfg),
            "--y1", str(data_dir / "y1.mtxb"),
            "--y2", str(data_dir / "y2.mtxb"),
            "--labels", str(data_dir / "labels.txt"),
            "--split", str(data_dir / "split.json"),
            "--model", str(d / "model.hmgm"),
            "--trace", str(d / "trace.csv"),
        ]
    )
    assert code == EXIT_OK
    return d


def test_synth_writes_all_artifacts(data_dir):
    assert read_matrix(data_dir / "y1.mtxb").shape == (60, 6)
    assert read_matrix(data_dir / "y2.mtxb").shape == (60, 5)
    assert read_matrix(data_dir / "z_true.mtxb").shape == (60, 2)
    split = json.loads((data_dir / "split.json").read_text())
    assert len(split["train"]) == 48 and len(split["test"]) == 12
    labels = (data_dir / "labels.txt").read_text().strip().splitlines()
    assert len(labels) == 60


def test_train_writes_model_and_trace(trained_dir):
    assert (trained_dir / "model.hmgm").stat().st_size > 0
    lines = (trained_dir / "trace.csv").read_text().strip().splitlines()
    assert lines[0] == "epoch,rotation,iteration,objective,gradnorm,accepted"
    assert len(lines) > 1


def test_embed_and_retrieve_eval(data_dir, trained_dir, tmp_path):
    split = json.loads((data_dir / "split.json").read_text())
    test_idx = np.array(split["test"])
    for mod, src in ((1, "y1.mtxb"), (2, "y2.mtxb")):
        y = read_matrix(data_dir / src)
        from hmgp.dataio import write_matrix

        write_matrix(y[test_idx], tmp_path / f"test{mod}.mtxb")
        code = main(
            [
                "embed",
                "--model", str(trained_dir / "model.hmgm"),
                "--test", str(tmp_path / f"test{mod}.mtxb"),
                "--modality", str(mod),
                "--out", str(tmp_path / f"lat{mod}.mtxb"),
            ]
        )
        assert code == EXIT_OK
        assert read_matrix(tmp_path / f"lat{mod}.mtxb").shape == (test_idx.size, 2)

    labels = (data_dir / "labels.txt").read_text().splitlines()
    (tmp_path / "test_labels.txt").write_text(
        "\n".join(labels[i] for i in test_idx) + "\n"
    )
    code = main(
        [
            "retrieve-eval",
            "--latents1", str(tmp_path / "lat1.mtxb"),
            "--latents2", str(tmp_path / "lat2.mtxb"),
            "--labels", str(tmp_path / "test_labels.txt"),
            "--out", str(tmp_path / "report.json"),
            "--pr-out", str(tmp_path / "pr"),
            "--ap-out", str(tmp_path / "ap"),
        ]
    )
    assert code == EXIT_OK
    report = json.loads((tmp_path / "report.json").read_text())
    assert set(report) == {"map_i2t", "map_t2i", "map_average"}
    assert 0.0 <= report["map_average"] <= 1.0
    pr = (tmp_path / "pr.i2t.csv").read_text().strip().splitlines()
    assert pr[0] == "recall,precision" and len(pr) == 12
    ap = (tmp_path / "ap.t2i.csv").read_text().strip().splitlines()
    assert ap[0] == "query,ap" and len(ap) == test_idx.size + 1


def test_diagnose(trained_dir, tmp_path):
    out = tmp_path / "diag"
    code = main(
        [
            "diagnose",
            "--model", str(trained_dir / "model.hmgm"),
            "--out-dir", str(out),
            "--baseline-model", str(trained_dir / "model.hmgm"),
        ]
    )
    assert code == EXIT_OK
    summary = json.loads((out / "divergence.json").read_text())
    assert len(summary["riemannian"]) == 2
    assert summary["total"] == pytest.approx(summary["baseline_total"])
    assert (out / "abs_diff_mod1.mtxb").exists()
    comparison = (out / "divergence_comparison.csv").read_text().splitlines()
    assert comparison[0] == "model,modality,riemannian"


def test_sweep(data_dir, tmp_path):
    cfg = write_config(
        tmp_path / "cfg.json", variant="hm-SimGP", harmonization="fnorm", M=24, inference_iters=20
    )
    code = main(
        [
            "sweep",
            "--config", str(cfg),
            "--y1", str(data_dir / "y1.mtxb"),
            "--y2", str(data_dir / "y2.mtxb"),
            "--labels", str(data_dir / "labels.txt"),
            "--split", str(data_dir / "split.json"),
            "--grid-mu", "0,1",
            "--out", str(tmp_path / "sweep.csv"),
        ]
    )
    assert code == EXIT_OK
    lines = (tmp_path / "sweep.csv").read_text().strip().splitlines()
    assert lines[0] == "mu,lambda,map_i2t,map_t2i,map_average"
    assert len(lines) == 3
    assert lines[1].startswith("0.0,") and lines[2].startswith("1.0,")


def test_gradcheck_ok_and_harmonization_required():
    assert main(["gradcheck", "--variant", "hm-SimGP", "--harmonization", "trace", "--n", "8"]) == EXIT_OK
    assert main(["gradcheck", "--variant", "hm-SimGP"]) == EXIT_DATA


def test_usage_errors_exit_1():
    assert main([]) == EXIT_USAGE
    assert main(["train"]) == EXIT_USAGE
    assert main(["gradcheck", "--variant", "notamodel"]) == EXIT_USAGE


def test_missing_file_exits_2(tmp_path):
    cfg = write_config(tmp_path / "cfg.json")
    code = main(
        [
            "train",
            "--config", str(cfg),
            "--y1", str(tmp_path / "missing.mtxb"),
            "--y2", str(tmp_path / "missing2.mtxb"),
            "--model", str(tmp_path / "m.hmgm"),
        ]
    )
    assert code == EXIT_DATA


def test_corrupt_matrix_exits_2(tmp_path, data_dir):
    bad = tmp_path / "bad.mtxb"
    bad.write_bytes(b"JUNKJUNKJUNK")
    cfg = write_config(tmp_path / "cfg.json")
    code = main(
        [
            "train",
            "--config", str(cfg),
            "--y1", str(bad),
            "--y2", str(data_dir / "y2.mtxb"),
            "--model", str(tmp_path / "m.hmgm"),
        ]
    )
    assert code == EXIT_DATA


def test_bad_config_exits_2(tmp_path, data_dir):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"schema_version": SCHEMA_VERSION, "variant": "mGPLVM"}))
    code = main(
        [
            "train",
            "--config", str(cfg),
            "--y1", str(data_dir / "y1.mtxb"),
            "--y2", str(data_dir / "y2.mtxb"),
            "--model", str(tmp_path / "m.hmgm"),
        ]
    )
    assert code == EXIT_DATA


def test_embed_rejects_bad_modality(trained_dir, data_dir, tmp_path):
    code = main(
        [
            "embed",
            "--model", str(trained_dir / "model.hmgm"),
            "--test", str(data_dir / "y1.mtxb"),
            "--modality", "3",
            "--out", str(tmp_path / "lat.mtxb"),
        ]
    )
    assert code == EXIT_DATA

import json
import subprocess
import sys

import numpy as np
import pytest

from wsosvm.cli import main
from wsosvm.formats import read_dataset, read_labels_csv, sha256_file
from wsosvm.features import PER_CONTRAST

SMALL = """\
# small noiseless phantom
width = 96
height = 96
noise = 0
n_biopsy = 12
n_unlabeled = 16
n_normal = 16
genes = EGFR,PTEN
min_separation = 2
"""


def run(*argv):
    return main([str(a) for a in argv])


def pipeline(root):
    """Run every subcommand once; returns the output directories."""
    root.mkdir(parents=True, exist_ok=True)
    cfg = root / "small.cfg"
    cfg.write_text(SMALL)
    st, ex, tr, tr2 = root / "stack", root / "data", root / "model", root / "model_pten"
    assert run("synth", "--config", cfg, "--out", st) == 0
    assert run("extract", "--stack", st / "stack.manifest", "--centers", st / "centers_EGFR.csv",
               "--out", ex) == 0
    assert run("extract", "--stack", st / "stack.manifest", "--centers", st / "centers_PTEN.csv",
               "--out", root / "data_pten") == 0
    assert run("train", "--data", ex / "dataset.csv", "--kernel", "linear", "--c1", 10, "--out", tr) == 0
    assert run("train", "--data", root / "data_pten" / "dataset.csv", "--kernel", "linear", "--c1", 10,
               "--out", tr2) == 0
    assert run("cv", "--data", ex / "dataset.csv", "--kernel", "linear", "--folds", 3, "--repeats", 2,
               "--out", root / "cv") == 0
    assert run("tune", "--data", ex / "dataset.csv", "--kernel", "linear", "--folds", 3, "--repeats", 1,
               "--c1-grid", "1,10", "--c2-grid", "1", "--out", root / "tune") == 0
    assert run("map", "--stack", st / "stack.manifest", "--model", f"EGFR={tr / 'model.json'}",
               "--model", f"PTEN={tr2 / 'model.json'}", "--joint", "EGFR", "PTEN",
               "--out", root / "map") == 0
    assert run("explain", "--model", tr / "model.json", "--data", ex / "dataset.csv",
               "--out", root / "shap") == 0
    return root


def digests(root):
    return {str(p.relative_to(root)): sha256_file(p) for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    return pipeline(tmp_path_factory.mktemp("cli") / "run")


def test_every_directory_has_provenance(workspace):
    for d in ("stack", "data", "model", "cv", "tune", "map", "shap"):
        prov = json.loads((workspace / d / "provenance.json").read_text())
        assert {"command", "config", "inputs", "schemas", "package_version"} <= set(prov)
    prov = json.loads((workspace / "map" / "provenance.json").read_text())
    assert set(prov["inputs"]) == {"stack", "model_EGFR", "model_PTEN"}
    assert prov["inputs"]["stack"] == sha256_file(workspace / "stack" / "stack.manifest")


def test_extract_layout(workspace):
    rows, feats = read_dataset(workspace / "data" / "dataset.csv")
    assert len(rows) == 12 + 16 + 16 and feats.shape[1] == 5 * PER_CONTRAST
    header = (workspace / "data" / "dataset.csv").read_text().splitlines()[1].split(",")
    assert len(header) == 284
    manifest = (workspace / "data" / "features.manifest").read_text().splitlines()
    assert [line.split(",")[0] for line in manifest] == [str(i) for i in range(280)]
    assert {r[0] for r in rows} == {"biopsy", "unlabeled", "normal"}


def test_train_reports_perfect_training_accuracy(tmp_path, workspace, capsys):
    run("train", "--data", workspace / "data" / "dataset.csv", "--kernel", "linear", "--c1", 10,
        "--out", tmp_path)
    assert "training biopsy accuracy 1.0" in capsys.readouterr().out


def test_cv_summary_rows(workspace):
    lines = (workspace / "cv" / "cv_summary.csv").read_text().splitlines()
    assert lines[0] == "metric,mean (std)"
    for line, name in zip(lines[1:4], ("accuracy", "sensitivity", "specificity")):
        assert line.startswith(name + ",")
        value = line.split(",", 1)[1]
        mean, std = value.split(" ")
        assert float(mean) >= 0 and std.startswith("(") and std.endswith(")")
    folds = (workspace / "cv" / "cv_folds.csv").read_text().splitlines()
    assert folds[0] == "#schema=wso-cv/1" and len(folds) == 2 + 6


def test_map_outputs(workspace):
    m = workspace / "map"
    for gene in ("EGFR", "PTEN"):
        summary = json.loads((m / f"proportions_{gene}.json").read_text())
        p = summary["proportions"]
        assert abs(p["altered"] + p["non_altered"] + p["class0"] - 1) <= 1e-12
        assert (m / f"map_{gene}.pgm").read_bytes().startswith(b"P5\n96 96\n255\n")
    joint = read_labels_csv(m / "joint_EGFR_PTEN.csv")
    assert set(np.unique(joint)) <= {-1, 0, 1, 2, 3}


def test_joint_map_with_itself(workspace, tmp_path):
    model = workspace / "model" / "model.json"
    assert run("map", "--stack", workspace / "stack" / "stack.manifest", "--model", f"A={model}",
               "--model", f"B={model}", "--joint", "A", "B", "--out", tmp_path) == 0
    assert set(np.unique(read_labels_csv(tmp_path / "joint_A_B.csv"))) <= {-1, 0, 3}


def test_explain_outputs(workspace):
    summary = (workspace / "shap" / "shap_summary.csv").read_text().splitlines()
    assert summary[1] == "contrast,mean_abs_shap"
    assert [line.split(",")[0] for line in summary[2:7]] == ["T1+C", "T2", "MD", "FA", "rCBV"]
    samples = (workspace / "shap" / "shap_samples.csv").read_text().splitlines()
    assert len(samples) == 2 + 12


def test_pipeline_is_byte_reproducible(workspace, tmp_path):
    again = pipeline(tmp_path / "run")
    assert digests(again) == digests(workspace)


def test_jobs_do_not_change_map(workspace, tmp_path):
    model = workspace / "model" / "model.json"
    run("map", "--stack", workspace / "stack" / "stack.manifest", "--model", f"EGFR={model}",
        "--jobs", 3, "--out", tmp_path)
    assert sha256_file(tmp_path / "map_EGFR.csv") == sha256_file(workspace / "map" / "map_EGFR.csv")


# -- errors ------------------------------------------------------------------------------

def test_default_synth(tmp_path):
    assert run("synth", "--out", tmp_path) == 0
    manifest = (tmp_path / "stack.manifest").read_text()
    for name in ("T1+C", "T2", "MD", "FA", "rCBV", "CE", "NE", "necrosis", "contralateral"):
        assert f" {name} " in manifest
    assert (tmp_path / "channel_T2.plane").read_bytes().startswith(b"WSOPLANE 1 128 128\n")


def test_synth_config_errors(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("width = 16\n")
    assert run("synth", "--config", cfg, "--out", tmp_path / "o") == 2
    assert "32" in capsys.readouterr().err
    cfg.write_text("width = 64\ncolour = red\n")
    assert run("synth", "--config", cfg, "--out", tmp_path / "o") == 2
    assert "colour" in capsys.readouterr().err
    cfg.write_text("noise = loud\n")
    assert run("synth", "--config", cfg, "--out", tmp_path / "o") == 2


def test_extract_out_of_bounds_names_row(workspace, tmp_path, capsys):
    centers = tmp_path / "c.csv"
    centers.write_text("#schema=wso-centers/1\nrole,class,row,col\nnormal,0,40,40\nnormal,0,1,40\n")
    code = run("extract", "--stack", workspace / "stack" / "stack.manifest", "--centers", centers,
               "--out", tmp_path / "o")
    assert code == 3
    assert "c.csv:4:" in capsys.readouterr().err


def test_schema_errors_exit_3(workspace, tmp_path, capsys):
    bad = tmp_path / "d.csv"
    bad.write_text("#schema=wso-dataset/1\nrole,class,row,col,f000\nbiopsy,1,2,3,0.5\nbiopsy,NA,2,3,1\n")
    assert run("train", "--data", bad, "--out", tmp_path / "o") == 3
    assert "d.csv:4:" in capsys.readouterr().err
    one_class = tmp_path / "e.csv"
    one_class.write_text("#schema=wso-dataset/1\nrole,class,row,col,f000\nbiopsy,1,2,3,0.5\n"
                         "normal,0,2,3,1\n")
    assert run("train", "--data", one_class, "--out", tmp_path / "o") == 3


def test_layout_mismatch_exit_3(workspace, tmp_path):
    small = tmp_path / "d.csv"
    small.write_text("#schema=wso-dataset/1\nrole,class,row,col,f000\nbiopsy,1,2,3,0.5\n"
                     "biopsy,2,2,3,1.5\nnormal,0,2,3,-1\n")
    assert run("train", "--data", small, "--kernel", "linear", "--out", tmp_path / "m") == 0
    assert run("map", "--stack", workspace / "stack" / "stack.manifest",
               "--model", f"X={tmp_path / 'm' / 'model.json'}", "--out", tmp_path / "o") == 3


def test_bad_model_flag_and_joint(workspace, tmp_path):
    stack = workspace / "stack" / "stack.manifest"
    assert run("map", "--stack", stack, "--model", "nogene", "--out", tmp_path) == 2
    model = workspace / "model" / "model.json"
    assert run("map", "--stack", stack, "--model", f"A={model}", "--joint", "A", "B",
               "--out", tmp_path) == 2


def test_non_convergence_exit_4(workspace, tmp_path, monkeypatch):
    import wsosvm.cli as cli
    from wsosvm.qpsolve import NonConvergenceError

    def stuck(*args, **kwargs):
        raise NonConvergenceError("iteration limit reached", None)

    monkeypatch.setattr(cli, "train", stuck)
    assert run("train", "--data", workspace / "data" / "dataset.csv", "--out", tmp_path) == 4


def test_unknown_flag_is_usage_error():
    proc = subprocess.run([sys.executable, "-m", "wsosvm.cli", "train", "--bogus"],
                          capture_output=True, text=True)
    assert proc.returncode == 2 and "usage" in proc.stderr

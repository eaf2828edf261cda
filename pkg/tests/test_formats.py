import numpy as np
import pytest

from wsosvm.formats import (SchemaError, model_digest, read_centers, read_dataset, read_labels_csv,
                            read_model, read_plane, read_stack, write_centers, write_dataset,
                            write_labels_csv, write_model, write_plane, write_stack)
from wsosvm.phantom import PhantomConfig, generate
from wsosvm.wso import TrainingSet, train


def test_plane_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    plane = rng.normal(size=(5, 7)).astype(np.float32).astype(np.float64)
    write_plane(tmp_path / "a.plane", plane)
    data = (tmp_path / "a.plane").read_bytes()
    assert data.startswith(b"WSOPLANE 1 7 5\n") and len(data) == 15 + 4 * 35
    assert np.array_equal(read_plane(tmp_path / "a.plane"), plane)


def test_plane_rejects_bad_files(tmp_path):
    (tmp_path / "v.plane").write_bytes(b"WSOPLANE 2 1 1\n" + bytes(4))
    with pytest.raises(SchemaError, match="version"):
        read_plane(tmp_path / "v.plane")
    (tmp_path / "s.plane").write_bytes(b"WSOPLANE 1 2 2\n" + bytes(4))
    with pytest.raises(SchemaError, match="payload"):
        read_plane(tmp_path / "s.plane")


def test_stack_round_trip(tmp_path):
    stack = generate(PhantomConfig(width=40, height=36, seed=2))
    manifest = write_stack(stack, tmp_path)
    back = read_stack(manifest)
    assert list(back.channels) == list(stack.channels)
    for k in stack.channels:
        assert np.array_equal(back.channels[k], stack.channels[k])
    for k in stack.masks:
        assert np.array_equal(back.masks[k], stack.masks[k])
    for k in stack.truth:
        assert np.array_equal(back.truth[k], stack.truth[k])


def test_stack_rejects_unknown_schema_version(tmp_path):
    manifest = write_stack(generate(PhantomConfig(width=32, height=32)), tmp_path)
    text = manifest.read_text().replace("wso-stack/1", "wso-stack/9")
    manifest.write_text(text)
    with pytest.raises(SchemaError, match="version"):
        read_stack(manifest)


def test_centers_and_dataset_round_trip(tmp_path):
    rows = [("biopsy", 2, 10, 11), ("unlabeled", None, 12, 13), ("normal", 0, 20, 21)]
    write_centers(tmp_path / "c.csv", rows)
    assert read_centers(tmp_path / "c.csv") == rows
    feats = np.random.default_rng(1).normal(size=(3, 4))
    write_dataset(tmp_path / "d.csv", rows, feats)
    back_rows, back = read_dataset(tmp_path / "d.csv")
    assert back_rows == rows and np.array_equal(back, feats)
    header = (tmp_path / "d.csv").read_text().splitlines()[1]
    assert header == "role,class,row,col,f000,f001,f002,f003"


@pytest.mark.parametrize("line, needle", [
    ("biopsy,1,1", "fields"),
    ("biopsy,0,1,1", "class 1 or 2"),
    ("surgeon,1,1,1", "role"),
    ("normal,7,1,1", "class must be"),
    ("normal,0,x,1", "integers"),
])
def test_centers_errors_name_the_line(tmp_path, line, needle):
    p = tmp_path / "c.csv"
    p.write_text(f"#schema=wso-centers/1\nrole,class,row,col\nnormal,0,5,5\n{line}\n")
    with pytest.raises(SchemaError, match=needle) as err:
        read_centers(p)
    assert ":4:" in str(err.value)


def test_dataset_schema_checks(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("#schema=wso-dataset/2\nrole,class,row,col,f000\n")
    with pytest.raises(SchemaError, match="version"):
        read_dataset(p)
    p.write_text("#schema=wso-dataset/1\nrole,class,row,col,f001\n")
    with pytest.raises(SchemaError, match=":2:"):
        read_dataset(p)
    p.write_text("#schema=wso-dataset/1\nrole,class,row,col,f000\nnormal,0,1,1,nan\n")
    with pytest.raises(SchemaError, match=":3:"):
        read_dataset(p)


def test_labels_round_trip(tmp_path):
    plane = np.array([[-1, 0], [1, 2]])
    write_labels_csv(tmp_path / "l.csv", plane)
    assert np.array_equal(read_labels_csv(tmp_path / "l.csv"), plane)


def _model():
    rng = np.random.default_rng(3)
    ts = TrainingSet(rng.normal(size=(5, 3)) - 1, rng.normal(size=(5, 3)) + 1,
                     rng.normal(size=(4, 3)), rng.normal(size=(4, 3)) - 3)
    return train(ts, "gaussian", 2.0, 0.5, seed=4, channels=("a",))


def test_model_round_trip(tmp_path):
    model = _model()
    digest = write_model(tmp_path / "m.json", model)
    back = read_model(tmp_path / "m.json")
    assert model_digest(back) == digest
    probe = np.random.default_rng(5).normal(size=(30, 3))
    assert np.array_equal(back.decision_values(probe), model.decision_values(probe))
    assert (back.b0, back.b1, back.channels) == (model.b0, model.b1, model.channels)


def test_model_tampering_and_version(tmp_path):
    write_model(tmp_path / "m.json", _model())
    text = (tmp_path / "m.json").read_text()
    (tmp_path / "t.json").write_text(text.replace('"C1": 2.0', '"C1": 3.0'))
    with pytest.raises(SchemaError, match="digest"):
        read_model(tmp_path / "t.json")
    (tmp_path / "v.json").write_text(text.replace("wso-model/1", "wso-model/2"))
    with pytest.raises(SchemaError, match="format"):
        read_model(tmp_path / "v.json")
    (tmp_path / "j.json").write_text("{")
    with pytest.raises(SchemaError):
        read_model(tmp_path / "j.json")

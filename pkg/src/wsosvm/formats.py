"""On-disk formats: plane files, stack manifests, versioned CSVs, model files
and P5 graymaps.

Every CSV starts with a ``#schema=<name>/<version>`` line; readers reject
other names and versions. Floats are written with ``repr`` so values
round-trip exactly.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .kernels import KernelSpec, Standardizer
from .stack import ContrastStack
from .wso import TrainedModel

PLANE_MAGIC = "WSOPLANE"
PLANE_VERSION = 1
STACK_SCHEMA = "wso-stack/1"
DATASET_SCHEMA = "wso-dataset/1"
CENTERS_SCHEMA = "wso-centers/1"
LABELS_SCHEMA = "wso-labels/1"
MODEL_FORMAT = "wso-model/1"
ROLES = ("biopsy", "unlabeled", "normal")


class SchemaError(ValueError):
    """Malformed or unsupported file content; the message names file and line."""


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# -- planes and stacks -------------------------------------------------------------------

def write_plane(path, plane) -> None:
    a = np.asarray(plane)
    h, w = a.shape
    header = f"{PLANE_MAGIC} {PLANE_VERSION} {w} {h}\n".encode("ascii")
    Path(path).write_bytes(header + np.ascontiguousarray(a, dtype="<f4").tobytes())


def read_plane(path) -> np.ndarray:
    data = Path(path).read_bytes()
    nl = data.find(b"\n")
    if nl < 0:
        raise SchemaError(f"{path}: missing plane header")
    parts = data[:nl].decode("ascii", "replace").split()
    if len(parts) != 4 or parts[0] != PLANE_MAGIC:
        raise SchemaError(f"{path}: not a {PLANE_MAGIC} file")
    if parts[1] != str(PLANE_VERSION):
        raise SchemaError(f"{path}: unsupported plane version {parts[1]}")
    w, h = int(parts[2]), int(parts[3])
    body = data[nl + 1:]
    if len(body) != 4 * w * h:
        raise SchemaError(f"{path}: expected {4 * w * h} payload bytes, found {len(body)}")
    return np.frombuffer(body, dtype="<f4").reshape(h, w).astype(np.float64)


def _safe_name(name: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_" else "_" for ch in name)


def write_stack(stack: ContrastStack, directory) -> Path:
    """Write every plane plus a manifest; returns the manifest path.

    Manifest lines after the schema line: ``<kind> <name> <file>`` with kind
    one of channel, mask, truth.
    """
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    lines = [f"#schema={STACK_SCHEMA}"]
    for kind, planes in (("channel", stack.channels), ("mask", stack.masks), ("truth", stack.truth)):
        for name, plane in planes.items():
            fname = f"{kind}_{_safe_name(name)}.plane"
            write_plane(d / fname, np.asarray(plane, dtype=np.float64))
            lines.append(f"{kind} {name} {fname}")
    manifest = d / "stack.manifest"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


def _check_schema(path, first_line: str, expected: str) -> None:
    if not first_line.startswith("#schema="):
        raise SchemaError(f"{path}:1: missing '#schema=' line")
    got = first_line[len("#schema="):].strip()
    name, _, version = got.partition("/")
    ename, _, eversion = expected.partition("/")
    if name != ename:
        raise SchemaError(f"{path}:1: expected schema {ename}, found {name}")
    if version != eversion:
        raise SchemaError(f"{path}:1: unsupported {name} version {version!r} (reader supports {eversion})")


def read_stack(manifest) -> ContrastStack:
    manifest = Path(manifest)
    lines = manifest.read_text().splitlines()
    if not lines:
        raise SchemaError(f"{manifest}: empty manifest")
    _check_schema(manifest, lines[0], STACK_SCHEMA)
    planes = {"channel": {}, "mask": {}, "truth": {}}
    for no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(" ")
        if len(parts) != 3 or parts[0] not in planes:
            raise SchemaError(f"{manifest}:{no}: expected '<channel|mask|truth> <name> <file>'")
        kind, name, fname = parts
        planes[kind][name] = read_plane(manifest.parent / fname)
    if not planes["channel"]:
        raise SchemaError(f"{manifest}: no channel planes listed")
    masks = {k: v != 0 for k, v in planes["mask"].items()}
    truth = {k: v.astype(np.int8) for k, v in planes["truth"].items()}
    return ContrastStack(planes["channel"], masks, truth)


# -- CSV tables --------------------------------------------------------------------------

def _fmt(v) -> str:
    return repr(float(v))


def feature_columns(dim: int) -> list[str]:
    return [f"f{i:03d}" for i in range(dim)]


def write_centers(path, rows) -> None:
    """``rows``: iterable of (role, class or None, row, col)."""
    out = [f"#schema={CENTERS_SCHEMA}", "role,class,row,col"]
    for role, cls, r, c in rows:
        out.append(f"{role},{'NA' if cls is None else int(cls)},{int(r)},{int(c)}")
    Path(path).write_text("\n".join(out) + "\n")


def _parse_role_class(path, no, role, cls):
    if role not in ROLES:
        raise SchemaError(f"{path}:{no}: unknown role {role!r}")
    if cls == "NA":
        value = None
    else:
        try:
            value = int(cls)
        except ValueError:
            raise SchemaError(f"{path}:{no}: class must be 0, 1, 2 or NA, got {cls!r}") from None
        if value not in (0, 1, 2):
            raise SchemaError(f"{path}:{no}: class must be 0, 1, 2 or NA, got {cls!r}")
    if role == "biopsy" and value not in (1, 2):
        raise SchemaError(f"{path}:{no}: biopsy rows need class 1 or 2")
    return value


def read_centers(path):
    lines = Path(path).read_text().splitlines()
    if len(lines) < 2:
        raise SchemaError(f"{path}: missing header")
    _check_schema(path, lines[0], CENTERS_SCHEMA)
    if lines[1] != "role,class,row,col":
        raise SchemaError(f"{path}:2: expected header 'role,class,row,col'")
    rows = []
    for no, line in enumerate(lines[2:], start=3):
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 4:
            raise SchemaError(f"{path}:{no}: expected 4 fields, found {len(parts)}")
        cls = _parse_role_class(path, no, parts[0], parts[1])
        try:
            r, c = int(parts[2]), int(parts[3])
        except ValueError:
            raise SchemaError(f"{path}:{no}: row and col must be integers") from None
        rows.append((parts[0], cls, r, c))
    return rows


def write_dataset(path, rows, features) -> None:
    """``rows`` as for write_centers; ``features`` one vector per row."""
    features = np.asarray(features, dtype=np.float64)
    dim = features.shape[1]
    out = [f"#schema={DATASET_SCHEMA}", ",".join(["role", "class", "row", "col", *feature_columns(dim)])]
    for (role, cls, r, c), f in zip(rows, features):
        out.append(",".join([role, "NA" if cls is None else str(int(cls)), str(int(r)), str(int(c)),
                             *(_fmt(v) for v in f)]))
    Path(path).write_text("\n".join(out) + "\n")


def read_dataset(path):
    """Returns ``(rows, features)`` with rows as (role, class, row, col)."""
    lines = Path(path).read_text().splitlines()
    if len(lines) < 2:
        raise SchemaError(f"{path}: missing header")
    _check_schema(path, lines[0], DATASET_SCHEMA)
    header = lines[1].split(",")
    if header[:4] != ["role", "class", "row", "col"] or header[4:] != feature_columns(len(header) - 4):
        raise SchemaError(f"{path}:2: expected header 'role,class,row,col,f000,...'")
    dim = len(header) - 4
    if dim == 0:
        raise SchemaError(f"{path}:2: no feature columns")
    rows, feats = [], []
    for no, line in enumerate(lines[2:], start=3):
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != dim + 4:
            raise SchemaError(f"{path}:{no}: expected {dim + 4} fields, found {len(parts)}")
        cls = _parse_role_class(path, no, parts[0], parts[1])
        try:
            r, c = int(parts[2]), int(parts[3])
            f = [float(v) for v in parts[4:]]
        except ValueError:
            raise SchemaError(f"{path}:{no}: non-numeric field") from None
        if not np.all(np.isfinite(f)):
            raise SchemaError(f"{path}:{no}: non-finite feature value")
        rows.append((parts[0], cls, r, c))
        feats.append(f)
    return rows, np.array(feats, dtype=np.float64).reshape(-1, dim)


def write_labels_csv(path, labels) -> None:
    out = [f"#schema={LABELS_SCHEMA}"]
    out += [",".join(str(int(v)) for v in row) for row in np.asarray(labels)]
    Path(path).write_text("\n".join(out) + "\n")


def read_labels_csv(path) -> np.ndarray:
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise SchemaError(f"{path}: empty file")
    _check_schema(path, lines[0], LABELS_SCHEMA)
    rows = []
    for no, line in enumerate(lines[1:], start=2):
        try:
            rows.append([int(v) for v in line.split(",")])
        except ValueError:
            raise SchemaError(f"{path}:{no}: labels must be integers") from None
    if len({len(r) for r in rows}) > 1:
        raise SchemaError(f"{path}: ragged label rows")
    return np.array(rows, dtype=np.int64)


def write_pgm(path, pixels) -> None:
    """8-bit binary portable graymap (P5)."""
    p = np.asarray(pixels, dtype=np.uint8)
    h, w = p.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + p.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos].decode("ascii"))
    if fields[0] != "P5" or fields[3] != "255":
        raise SchemaError(f"{path}: not an 8-bit P5 graymap")
    w, h = int(fields[1]), int(fields[2])
    return np.frombuffer(data[pos + 1:pos + 1 + w * h], dtype=np.uint8).reshape(h, w)


# -- model files -------------------------------------------------------------------------

def _matrix(a) -> list:
    return [[float(v) for v in row] for row in np.atleast_2d(a)] if np.size(a) else []


def model_to_dict(model: TrainedModel) -> dict:
    return {
        "format_version": MODEL_FORMAT,
        "kernel": model.kernel.kind,
        "gamma": float(model.kernel.gamma),
        "C1": model.C1,
        "C2": model.C2,
        "b0": model.b0,
        "b1": model.b1,
        "channels": list(model.channels),
        "standardization": {"mean": [float(v) for v in model.standardizer.mean],
                            "std": [float(v) for v in model.standardizer.std]},
        "support": _matrix(model.support),
        "coef": [float(v) for v in model.coef],
        "block": [int(v) for v in model.block],
        "background": _matrix(model.background) if model.background is not None else [],
        "objective": model.objective,
        "kkt_max_residual": model.kkt_max_residual,
        "provenance": model.provenance,
    }


def model_digest(model: TrainedModel) -> str:
    body = json.dumps(model_to_dict(model), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(body.encode()).hexdigest()


def write_model(path, model: TrainedModel) -> str:
    """Write a model file; returns its content digest."""
    doc = model_to_dict(model)
    digest = model_digest(model)
    doc["digest"] = digest
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")
    return digest


def read_model(path) -> TrainedModel:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}:{exc.lineno}: invalid model file ({exc.msg})") from None
    if doc.get("format_version") != MODEL_FORMAT:
        raise SchemaError(f"{path}: unsupported model format {doc.get('format_version')!r}")
    try:
        dim = len(doc["standardization"]["mean"])
        kernel = KernelSpec(doc["kernel"], doc["gamma"])
        model = TrainedModel(
            support=np.array(doc["support"], dtype=np.float64).reshape(-1, dim),
            coef=np.array(doc["coef"], dtype=np.float64),
            block=np.array(doc["block"], dtype=np.int64),
            b0=float(doc["b0"]), b1=float(doc["b1"]), kernel=kernel,
            standardizer=Standardizer(np.array(doc["standardization"]["mean"], dtype=np.float64),
                                      np.array(doc["standardization"]["std"], dtype=np.float64)),
            C1=float(doc["C1"]), C2=float(doc["C2"]),
            objective=float(doc["objective"]), kkt_max_residual=float(doc["kkt_max_residual"]),
            background=np.array(doc["background"], dtype=np.float64).reshape(-1, dim),
            channels=tuple(doc["channels"]), provenance=doc["provenance"])
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"{path}: malformed model file ({exc})") from None
    if doc.get("digest") != model_digest(model):
        raise SchemaError(f"{path}: digest mismatch, file is corrupt or edited")
    return model

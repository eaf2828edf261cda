"""Command-line entry point.

Subcommands: synth, extract, train, tune, cv, map, explain. Each writes into
an output directory and records a ``provenance.json`` there holding the
resolved configuration, seed, schema versions and input digests (no paths or
timestamps, so identical runs produce identical bytes).

Exit codes: 0 success, 2 usage or configuration error, 3 data or schema
error, 4 numerical non-convergence.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .explain import AGGREGATIONS, explain
from .features import feature_manifest, feature_matrix
from .formats import (DATASET_SCHEMA, LABELS_SCHEMA, MODEL_FORMAT, STACK_SCHEMA, SchemaError,
                      read_centers, read_dataset, read_model, read_stack, sha256_file,
                      write_centers, write_dataset, write_model, write_stack)
from .harness import (CVConfig, Dataset, TuningError, full_training_set, metrics, repeated_cv,
                      tune)
from .maps import joint_map, predict_map, proportions, render
from .phantom import (DEFAULT_GENES, GeneSignature, PhantomConfig, PlacementError, generate,
                      sample_biopsies, sample_normal, sample_unlabeled)
from .qpsolve import QPError
from .stack import DEFAULT_CHANNELS, BoundsError
from .wso import train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
CV_SCHEMA = "wso-cv/1"
SHAP_SCHEMA = "wso-shap/1"


class ConfigError(ValueError):
    pass


# -- config files ----------------------------------------------------------------------

SYNTH_DEFAULTS = {
    "width": 128,
    "height": 128,
    "seed": 0,
    "noise": 0.05,
    "texture": 0.15,
    "necrosis": True,
    "channels": ",".join(DEFAULT_CHANNELS),
    "genes": ",".join(g.name for g in DEFAULT_GENES),
    "prevalence": 0.4,
    "n_biopsy": 30,
    "n_unlabeled": 60,
    "n_normal": 60,
    "min_separation": 4.0,
    "purity": 1.0,
}


def parse_config(text: str, defaults: dict, source: str = "config") -> dict:
    """Flat ``key = value`` lines; '#' starts a comment. Values are coerced
    to the type of the default."""
    out = dict(defaults)
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{no}: expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in defaults:
            raise ConfigError(f"{source}:{no}: unknown key {key!r}")
        kind = type(defaults[key])
        try:
            if kind is bool:
                if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
                    raise ValueError(value)
                out[key] = value.lower() in ("true", "1", "yes")
            else:
                out[key] = kind(value)
        except ValueError:
            raise ConfigError(f"{source}:{no}: bad value {value!r} for {key}") from None
    return out


def _phantom_config(cfg: dict) -> PhantomConfig:
    channels = tuple(c.strip() for c in cfg["channels"].split(",") if c.strip())
    known = {g.name: g for g in DEFAULT_GENES}
    genes = []
    for name in (g.strip() for g in cfg["genes"].split(",") if g.strip()):
        base = known.get(name, GeneSignature(name))
        genes.append(GeneSignature(
            name, {k: v for k, v in base.shifts.items() if k in channels},
            {k: v for k, v in base.texture_gain.items() if k in channels},
            cfg["prevalence"], base.blob_count, base.radius_range))
    try:
        return PhantomConfig(cfg["width"], cfg["height"], cfg["seed"], channels, tuple(genes),
                             cfg["noise"], cfg["texture"], necrosis=cfg["necrosis"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


# -- provenance ------------------------------------------------------------------------

def _write_provenance(out: Path, command: str, config: dict, inputs: dict) -> None:
    doc = {
        "command": command,
        "config": config,
        "inputs": {name: sha256_file(path) for name, path in sorted(inputs.items())},
        "package_version": __version__,
        "schemas": {"stack": STACK_SCHEMA, "dataset": DATASET_SCHEMA, "labels": LABELS_SCHEMA,
                    "model": MODEL_FORMAT, "cv": CV_SCHEMA, "shap": SHAP_SCHEMA},
    }
    (out / "provenance.json").write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")


def _outdir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _fmt(v) -> str:
    return "NA" if v is None else repr(float(v))


# -- subcommands -----------------------------------------------------------------------

def cmd_synth(args) -> int:
    cfg = dict(SYNTH_DEFAULTS)
    if args.config:
        cfg = parse_config(Path(args.config).read_text(), SYNTH_DEFAULTS, args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    pc = _phantom_config(cfg)
    stack = generate(pc)
    out = _outdir(args.out)
    write_stack(stack, out)
    for gene in stack.truth:
        bc, labels = sample_biopsies(stack, gene, cfg["n_biopsy"], cfg["min_separation"], pc.seed,
                                     cfg["purity"])
        uc, _ = sample_unlabeled(stack, cfg["n_unlabeled"], pc.seed)
        nc = sample_normal(stack, cfg["n_normal"], pc.seed)
        rows = [("biopsy", int(y), r, c) for (r, c), y in zip(bc, labels)]
        rows += [("unlabeled", None, r, c) for r, c in uc]
        rows += [("normal", 0, r, c) for r, c in nc]
        write_centers(out / f"centers_{gene}.csv", rows)
    (out / "features.manifest").write_text(feature_manifest(stack.channel_names))
    _write_provenance(out, "synth", cfg, {})
    print(f"wrote {len(stack.channels)}-channel {pc.width}x{pc.height} stack to {out}")
    return EXIT_OK


def cmd_extract(args) -> int:
    stack = read_stack(args.stack)
    rows = read_centers(args.centers)
    for no, (_, _, r, c) in enumerate(rows, start=3):
        if not stack.window_fits(r, c):
            raise SchemaError(f"{args.centers}:{no}: {BoundsError((r, c), stack.shape)}")
    feats = feature_matrix(stack, np.array([(r, c) for _, _, r, c in rows], dtype=np.int64).reshape(-1, 2))
    out = _outdir(args.out)
    write_dataset(out / "dataset.csv", rows, feats)
    (out / "features.manifest").write_text(feature_manifest(stack.channel_names))
    _write_provenance(out, "extract", {"channels": stack.channel_names},
                      {"stack": args.stack, "centers": args.centers})
    print(f"extracted {len(rows)} rows x {feats.shape[1]} features")
    return EXIT_OK


def load_dataset(path) -> Dataset:
    rows, feats = read_dataset(path)
    roles = np.array([r[0] for r in rows])
    labels = np.array([r[1] if r[0] == "biopsy" else 0 for r in rows], dtype=np.int64)
    bio = roles == "biopsy"
    try:
        return Dataset(feats[bio], labels[bio], feats[roles == "unlabeled"], feats[roles == "normal"])
    except ValueError as exc:
        raise SchemaError(f"{path}: {exc}") from None


def _gamma(args):
    if args.kernel == "linear":
        return None
    return "median" if args.gamma == "median" else float(args.gamma)


def _channels_for(dim: int, names):
    if names:
        return tuple(n.strip() for n in names.split(","))
    if dim == 56 * len(DEFAULT_CHANNELS):
        return DEFAULT_CHANNELS
    return ()


def cmd_train(args) -> int:
    ds = load_dataset(args.data)
    ts = full_training_set(ds, args.seed, ablation=args.ablation)
    channels = _channels_for(ds.biopsy.shape[1], args.channels)
    model = train(ts, args.kernel, args.c1, args.c2, gamma=_gamma(args), seed=args.seed,
                  channels=channels)
    out = _outdir(args.out)
    digest = write_model(out / "model.json", model)
    m = metrics(model.classify_many(ds.biopsy), ds.labels)
    config = {"kernel": args.kernel, "gamma": model.kernel.gamma, "C1": args.c1, "C2": args.c2,
              "seed": args.seed, "ablation": args.ablation}
    _write_provenance(out, "train", config, {"dataset": args.data})
    print(f"model {digest[:12]} b0={model.b0:.6g} b1={model.b1:.6g} support={len(model.coef)}")
    print(f"training biopsy accuracy {m.accuracy}")
    return EXIT_OK


def _grid(text):
    return tuple(float(v) for v in text.split(",")) if text else None


def _cv_config(args) -> CVConfig:
    kw = {"folds": args.folds, "repeats": args.repeats, "seed": args.seed,
          "screen_threshold": args.screen_threshold, "jobs": args.jobs}
    if getattr(args, "c1_grid", None):
        kw["C1_grid"] = _grid(args.c1_grid)
    if getattr(args, "c2_grid", None):
        kw["C2_grid"] = _grid(args.c2_grid)
    if getattr(args, "tune_repeats", None):
        kw["tune_repeats"] = args.tune_repeats
    try:
        return CVConfig(**kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def cmd_tune(args) -> int:
    ds = load_dataset(args.data)
    cfg = _cv_config(args)
    res = tune(ds, args.kernel, cfg, gamma=_gamma(args))
    out = _outdir(args.out)
    lines = ["#schema=wso-tune/1", "stage,C1,C2,accuracy"]
    c1_mid = cfg.C1_grid[len(cfg.C1_grid) // 2]
    lines += [f"screen,{c1_mid!r},{c2!r},{acc!r}" for c2, acc in res.screening.items()]
    lines += [f"fine,{c1!r},{c2!r},{acc!r}" for (c1, c2), acc in res.stage2.items()]
    lines.append(f"chosen,{res.C1!r},{res.C2!r},{res.stage2[(res.C1, res.C2)]!r}")
    (out / "tuning.csv").write_text("\n".join(lines) + "\n")
    _write_provenance(out, "tune", _config_dict(args, cfg), {"dataset": args.data})
    print(f"chosen C1={res.C1:g} C2={res.C2:g}")
    return EXIT_OK


def _config_dict(args, cfg: CVConfig) -> dict:
    return {"kernel": args.kernel, "gamma": args.gamma, "folds": cfg.folds, "repeats": cfg.repeats,
            "seed": cfg.seed, "C1_grid": list(cfg.C1_grid), "C2_grid": list(cfg.C2_grid),
            "screen_threshold": cfg.screen_threshold, "tune_repeats": cfg.tune_repeats}


def cmd_cv(args) -> int:
    ds = load_dataset(args.data)
    cfg = _cv_config(args)
    rep = repeated_cv(ds, args.kernel, args.c1, args.c2, cfg, gamma=_gamma(args), ablation=args.ablation)
    out = _outdir(args.out)
    lines = [f"#schema={CV_SCHEMA}",
             "repeat,fold,n_train,n_test,correct,accuracy,sensitivity,specificity,error"]
    for r in rep.records:
        lines.append(",".join([str(r.repeat), str(r.fold), str(r.n_train), str(r.n_test), str(r.correct),
                               _fmt(r.accuracy), _fmt(r.sensitivity), _fmt(r.specificity),
                               r.error.replace(",", ";")]))
    (out / "cv_folds.csv").write_text("\n".join(lines) + "\n")
    summary = ["metric,mean (std)"]
    for name, (mean, std) in rep.summary().items():
        summary.append(f"{name},{mean:.2f} ({std:.3f})")
    summary.append(f"failures,{rep.failures}")
    (out / "cv_summary.csv").write_text("\n".join(summary) + "\n")
    config = _config_dict(args, cfg) | {"C1": args.c1, "C2": args.c2, "ablation": args.ablation}
    _write_provenance(out, "cv", config, {"dataset": args.data})
    print("\n".join(summary))
    return EXIT_OK


def _parse_models(specs):
    models = {}
    for spec in specs:
        gene, sep, path = spec.partition("=")
        if not sep or not gene or not path:
            raise ConfigError(f"--model expects GENE=PATH, got {spec!r}")
        if gene in models:
            raise ConfigError(f"gene {gene!r} given twice")
        models[gene] = path
    return models


def cmd_map(args) -> int:
    stack = read_stack(args.stack)
    paths = _parse_models(args.model)
    if args.joint:
        missing = [g for g in args.joint if g not in paths]
        if missing:
            raise ConfigError(f"--joint names genes without a --model: {missing}")
    out = _outdir(args.out)
    maps = {}
    for gene, path in paths.items():
        model = read_model(path)
        try:
            pmap = predict_map(model, stack, gene, jobs=args.jobs)
        except ValueError as exc:
            raise SchemaError(f"{path}: {exc}") from None
        maps[gene] = pmap
        render(pmap.labels, out / f"map_{gene}.pgm")
        alt, non, zero = proportions(pmap) if pmap.classified.any() else (None, None, None)
        summary = {"gene": gene, "model_digest": pmap.model_digest, "seed": model.provenance.get("seed"),
                   "proportions": {"altered": alt, "non_altered": non, "class0": zero},
                   "classified_pixels": int(pmap.classified.sum())}
        (out / f"proportions_{gene}.json").write_text(json.dumps(summary, sort_keys=True, indent=1) + "\n")
    if args.joint:
        a, b = args.joint
        render(joint_map(maps[a], maps[b]), out / f"joint_{a}_{b}.pgm", joint=True)
    inputs = {"stack": args.stack} | {f"model_{g}": p for g, p in paths.items()}
    _write_provenance(out, "map", {"genes": sorted(paths), "joint": args.joint}, inputs)
    print(f"wrote {len(maps)} map(s) to {out}")
    return EXIT_OK


def cmd_explain(args) -> int:
    model = read_model(args.model)
    rows, feats = read_dataset(args.data)
    pick = np.array([r[0] == args.role for r in rows], dtype=bool)
    if not pick.any():
        raise SchemaError(f"{args.data}: no rows with role {args.role!r}")
    if model.dim != feats.shape[1]:
        raise SchemaError(f"{args.data}: {feats.shape[1]} features but the model expects {model.dim}")
    rep = explain(model, feats[pick], mode=args.mode, draws=args.draws, seed=args.seed,
                  aggregation=args.aggregation)
    names = list(model.channels) or [f"group{k}" for k in range(rep.values.shape[1])]
    out = _outdir(args.out)
    lines = [f"#schema={SHAP_SCHEMA}", ",".join(["row", "col", *names])]
    for (_, _, r, c), vals in zip([rw for rw, p in zip(rows, pick) if p], rep.values):
        lines.append(",".join([str(r), str(c), *(repr(float(v)) for v in vals)]))
    (out / "shap_samples.csv").write_text("\n".join(lines) + "\n")
    summary = [f"#schema={SHAP_SCHEMA}", "contrast,mean_abs_shap"]
    summary += [f"{n},{float(v)!r}" for n, v in zip(names, rep.summary)]
    summary.append(f"baseline,{rep.baseline!r}")
    (out / "shap_summary.csv").write_text("\n".join(summary) + "\n")
    config = {"mode": args.mode, "draws": args.draws, "seed": args.seed, "role": args.role,
              "aggregation": args.aggregation}
    _write_provenance(out, "explain", config, {"model": args.model, "dataset": args.data})
    print("\n".join(summary[1:]))
    return EXIT_OK


# -- argument parsing ------------------------------------------------------------------

def _model_flags(p, c_defaults=True):
    p.add_argument("--data", required=True, help="dataset CSV")
    p.add_argument("--kernel", choices=("gaussian", "linear"), default="gaussian")
    p.add_argument("--gamma", default="median", help="gaussian bandwidth or 'median'")
    if c_defaults:
        p.add_argument("--c1", type=float, default=1.0)
        p.add_argument("--c2", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)


def _cv_flags(p):
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--repeats", type=int, default=30)
    p.add_argument("--screen-threshold", type=float, default=0.80)
    p.add_argument("--jobs", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wsosvm", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a phantom stack and sample centers")
    p.add_argument("--config", help="flat key = value file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("extract", help="feature vectors for a centers CSV")
    p.add_argument("--stack", required=True, help="stack manifest")
    p.add_argument("--centers", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", help="train a model on a dataset CSV")
    _model_flags(p)
    p.add_argument("--ablation", action="store_true", help="no unlabeled samples (ordinal SVM)")
    p.add_argument("--channels", help="comma-separated contrast names of the feature layout")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("tune", help="two-stage (C1, C2) search")
    _model_flags(p, c_defaults=False)
    _cv_flags(p)
    p.add_argument("--tune-repeats", type=int, default=1)
    p.add_argument("--c1-grid", help="comma-separated C1 values")
    p.add_argument("--c2-grid", help="comma-separated C2 values")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("cv", help="repeated stratified cross-validation")
    _model_flags(p)
    _cv_flags(p)
    p.add_argument("--ablation", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("map", help="sliding-window prediction maps")
    p.add_argument("--stack", required=True)
    p.add_argument("--model", action="append", required=True, metavar="GENE=PATH")
    p.add_argument("--joint", nargs=2, metavar=("GENE_A", "GENE_B"))
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_map)

    p = sub.add_parser("explain", help="Shapley attributions per contrast")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--role", choices=("biopsy", "unlabeled", "normal"), default="biopsy")
    p.add_argument("--mode", choices=("exact-group", "sampled-feature"), default="exact-group")
    p.add_argument("--draws", type=int, default=2000)
    p.add_argument("--aggregation", choices=AGGREGATIONS, default="sum-then-abs")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_explain)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (QPError,) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (SchemaError, BoundsError, PlacementError, TuningError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

"""Repeated stratified cross-validation, two-stage (C1, C2) tuning, metrics and
the one-sided rank-sum test."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .qpsolve import QPError
from .rng import stream
from .wso import TrainingSet, train

DEFAULT_C2_GRID = (0.01, 0.1, 1.0, 10.0, 100.0)
DEFAULT_C1_GRID = tuple(float(v) for v in np.logspace(-2, 2, 13))
EXACT_LIMIT = 20


@dataclass
class Dataset:
    """Feature vectors of one gene's cohort.

    ``unlabeled_region`` tags each unlabeled sample 'CE' or 'NE'; when it is
    None the unlabeled pool is drawn from uniformly.
    """

    biopsy: np.ndarray
    labels: np.ndarray
    unlabeled: np.ndarray
    normal: np.ndarray
    unlabeled_region: np.ndarray | None = None

    def __post_init__(self):
        self.biopsy = np.atleast_2d(np.asarray(self.biopsy, dtype=np.float64))
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        dim = self.biopsy.shape[1]
        self.unlabeled = np.asarray(self.unlabeled, dtype=np.float64).reshape(-1, dim)
        self.normal = np.asarray(self.normal, dtype=np.float64).reshape(-1, dim)
        if len(self.labels) != len(self.biopsy):
            raise ValueError("one label per biopsy is required")
        if not set(np.unique(self.labels)) <= {1, 2}:
            raise ValueError("biopsy labels must be 1 or 2")
        if not (np.any(self.labels == 1) and np.any(self.labels == 2)):
            raise ValueError("both biopsy classes must be present")
        if self.unlabeled_region is not None:
            self.unlabeled_region = np.asarray(self.unlabeled_region, dtype=str)
            if len(self.unlabeled_region) != len(self.unlabeled):
                raise ValueError("one region tag per unlabeled sample is required")


@dataclass
class CVConfig:
    folds: int = 10
    repeats: int = 30
    seed: int = 0
    C2_grid: tuple = DEFAULT_C2_GRID
    C1_grid: tuple = DEFAULT_C1_GRID
    screen_threshold: float = 0.80
    tune_repeats: int = 1
    jobs: int = 1

    def __post_init__(self):
        if self.folds < 2:
            raise ValueError("folds must be at least 2")
        if self.repeats < 1:
            raise ValueError("repeats must be at least 1")
        for name in ("C1_grid", "C2_grid"):
            grid = tuple(float(v) for v in getattr(self, name))
            if not grid:
                raise ValueError(f"{name} is empty")
            if any(v < 0.01 - 1e-12 or v > 100 + 1e-9 for v in grid):
                raise ValueError(f"{name} values must lie in [0.01, 100]")
            if list(grid) != sorted(grid):
                raise ValueError(f"{name} must be ascending")
            setattr(self, name, grid)


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    sensitivity: float | None
    specificity: float | None


@dataclass
class FoldRecord:
    repeat: int
    fold: int
    n_train: int
    n_test: int
    correct: int
    accuracy: float | None
    sensitivity: float | None
    specificity: float | None
    error: str = ""


@dataclass
class CVReport:
    records: list[FoldRecord]
    repeat_metrics: list[Metrics]
    C1: float
    C2: float
    seed: int
    ablation: bool = False
    failures: int = 0

    def summary(self) -> dict[str, tuple[float, float]]:
        """Mean and population std of each metric over repeats."""
        out = {}
        for name in ("accuracy", "sensitivity", "specificity"):
            vals = np.array([getattr(m, name) for m in self.repeat_metrics
                             if getattr(m, name) is not None], dtype=float)
            out[name] = (float(vals.mean()), float(vals.std())) if vals.size else (math.nan, math.nan)
        return out

    def accuracies(self) -> np.ndarray:
        return np.array([m.accuracy for m in self.repeat_metrics], dtype=float)


class TuningError(RuntimeError):
    pass


def stratified_folds(labels, k: int, seed: int) -> np.ndarray:
    """Fold index per sample; per-class counts across folds differ by at most 1.

    Each class is shuffled and dealt round-robin; the deal continues from
    where the previous class stopped so total fold sizes also stay within 1.
    """
    labels = np.asarray(labels)
    if k < 2:
        raise ValueError("k must be at least 2")
    if k > len(labels):
        raise ValueError(f"cannot split {len(labels)} samples into {k} folds")
    rng = stream(seed, "folds")
    out = np.empty(len(labels), dtype=np.int64)
    offset = 0
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        idx = idx[rng.permutation(len(idx))]
        out[idx] = (offset + np.arange(len(idx))) % k
        offset = (offset + len(idx)) % k
    return out


def metrics(predicted, truth) -> Metrics:
    """Class 2 (altered) is the positive class; any other prediction on a
    class-2 sample is a false negative, and likewise for class 1."""
    p = np.asarray(predicted)
    t = np.asarray(truth)
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {p.size} predictions vs {t.size} labels")
    if t.size == 0:
        raise ValueError("metrics need at least one sample")
    pos, neg = t == 2, t == 1
    sens = float(np.mean(p[pos] == 2)) if pos.any() else None
    spec = float(np.mean(p[neg] == 1)) if neg.any() else None
    return Metrics(float(np.mean(p == t)), sens, spec)


def _draw(rng, n, size):
    if size > n:
        raise ValueError(f"need {size} samples from a pool of {n}")
    return np.sort(rng.choice(n, size, replace=False)) if size else np.empty(0, dtype=np.int64)


def auxiliary_sizes(n_train: int) -> tuple[int, int]:
    """(unlabeled, normal) counts whose total equals the training-biopsy count.

    The unlabeled half is rounded to the nearest even number (so CE and NE
    get equal shares) and the normal half keeps the remainder, which is never
    empty.
    """
    m12 = 2 * ((n_train + 1) // 4)
    return m12, n_train - m12


def draw_unlabeled(ds: Dataset, size: int, rng) -> np.ndarray:
    if ds.unlabeled_region is None:
        return _draw(rng, len(ds.unlabeled), size)
    half = size // 2
    parts = []
    for region, count in (("CE", half), ("NE", size - half)):
        pool = np.flatnonzero(ds.unlabeled_region == region)
        parts.append(pool[_draw(rng, len(pool), count)])
    return np.sort(np.concatenate(parts))


def _fold_training_set(ds: Dataset, train_idx, purpose, ablation):
    """Training set for one fold plus the indices of normals it used."""
    n_train = len(train_idx)
    m12, m0 = auxiliary_sizes(n_train)
    # normals come from their own stream so the ablation sees the same ones
    normal_idx = _draw(stream(*purpose, "normal"), len(ds.normal), m0)
    unl_idx = np.empty(0, dtype=np.int64) if ablation else draw_unlabeled(
        ds, m12, stream(*purpose, "unlabeled"))
    y = ds.labels[train_idx]
    X = ds.biopsy[train_idx]
    ts = TrainingSet(X[y == 1], X[y == 2], ds.unlabeled[unl_idx], ds.normal[normal_idx])
    return ts, normal_idx


def full_training_set(ds: Dataset, seed: int, ablation: bool = False) -> TrainingSet:
    """All biopsies plus auxiliary samples drawn by the fold policy, capped at
    the available pool sizes."""
    m12, m0 = auxiliary_sizes(len(ds.labels))
    m0 = min(m0, len(ds.normal))
    if ds.unlabeled_region is None:
        m12 = min(m12, len(ds.unlabeled))
    else:
        per = min(np.sum(ds.unlabeled_region == "CE"), np.sum(ds.unlabeled_region == "NE"))
        m12 = min(m12, 2 * int(per))
    normal_idx = _draw(stream(seed, "final", "normal"), len(ds.normal), m0)
    unl_idx = np.empty(0, dtype=np.int64) if ablation else draw_unlabeled(
        ds, m12, stream(seed, "final", "unlabeled"))
    X, y = ds.biopsy, ds.labels
    return TrainingSet(X[y == 1], X[y == 2], ds.unlabeled[unl_idx], ds.normal[normal_idx])


@dataclass
class _FoldResult:
    record: FoldRecord
    test_idx: np.ndarray
    predicted: np.ndarray | None


def _run_fold(ds, folds, r, f, seed, kernel, gamma, C1, C2, ablation, tag):
    test_idx = np.flatnonzero(folds == f)
    train_idx = np.flatnonzero(folds != f)
    try:
        ts, _ = _fold_training_set(ds, train_idx, (seed, tag, r, f), ablation)
        model = train(ts, kernel, C1, C2, gamma=gamma, seed=seed)
        pred = model.classify_many(ds.biopsy[test_idx])
    except (QPError, ValueError) as exc:
        rec = FoldRecord(r, f, len(train_idx), len(test_idx), 0, None, None, None, str(exc))
        return _FoldResult(rec, test_idx, None)
    m = metrics(pred, ds.labels[test_idx])
    rec = FoldRecord(r, f, len(train_idx), len(test_idx), int(np.sum(pred == ds.labels[test_idx])),
                     m.accuracy, m.sensitivity, m.specificity)
    return _FoldResult(rec, test_idx, pred)


def _map_jobs(fn, items, jobs):
    if jobs <= 1:
        return [fn(*it) for it in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(lambda it: fn(*it), items))


def repeated_cv(ds: Dataset, kernel, C1: float, C2: float, config: CVConfig, *,
                gamma="median", ablation: bool = False) -> CVReport:
    """Repeated stratified CV on the biopsies.

    Every fold trains on the other folds' biopsies plus freshly drawn
    unlabeled and normal samples (none with ``ablation``). Repeat-level
    metrics pool the held-out predictions of all folds of that repeat.
    """
    jobs = []
    fold_plans = []
    for r in range(config.repeats):
        folds = stratified_folds(ds.labels, config.folds, _repeat_seed(config.seed, r))
        fold_plans.append(folds)
        for f in range(config.folds):
            jobs.append((ds, folds, r, f, config.seed, kernel, gamma, C1, C2, ablation, "cv"))
    results = _map_jobs(_run_fold, jobs, config.jobs)
    records = [res.record for res in results]
    repeat_metrics = []
    for r in range(config.repeats):
        pred = np.zeros(len(ds.labels), dtype=np.int64)
        ok = np.zeros(len(ds.labels), dtype=bool)
        for res in results[r * config.folds:(r + 1) * config.folds]:
            if res.predicted is not None:
                pred[res.test_idx] = res.predicted
                ok[res.test_idx] = True
        if ok.any():
            repeat_metrics.append(metrics(pred[ok], ds.labels[ok]))
    failures = sum(1 for rec in records if rec.error)
    return CVReport(records, repeat_metrics, float(C1), float(C2), int(config.seed), ablation, failures)


def _repeat_seed(seed: int, r: int) -> int:
    return int(stream(seed, "repeat", r).integers(0, 2**63))


@dataclass
class TuneResult:
    C1: float
    C2: float
    screening: dict[float, float] = field(default_factory=dict)
    retained: list[float] = field(default_factory=list)
    stage2: dict[tuple[float, float], float] = field(default_factory=dict)


def _screen_fold(ds, folds, r, f, seed, kernel, gamma, C1, C2):
    """Tumoral-vs-normal accuracy via f0 on held-out biopsies plus as many
    normals that were not used for training."""
    test_idx = np.flatnonzero(folds == f)
    train_idx = np.flatnonzero(folds != f)
    ts, used = _fold_training_set(ds, train_idx, (seed, "tune", r, f), False)
    unused = np.setdiff1d(np.arange(len(ds.normal)), used)
    held = _draw(stream(seed, "tune", r, f, "held-normal"), len(unused), min(len(test_idx), len(unused)))
    model = train(ts, kernel, C1, C2, gamma=gamma, seed=seed)
    tumoral = model.classify_many(ds.biopsy[test_idx]) >= 1
    normal = model.classify_many(ds.normal[unused[held]]) >= 1 if held.size else np.empty(0, bool)
    return int(tumoral.sum() + (~normal).sum()), int(tumoral.size + normal.size)


def _biopsy_fold(ds, folds, r, f, seed, kernel, gamma, C1, C2):
    test_idx = np.flatnonzero(folds == f)
    ts, _ = _fold_training_set(ds, np.flatnonzero(folds != f), (seed, "tune", r, f), False)
    model = train(ts, kernel, C1, C2, gamma=gamma, seed=seed)
    pred = model.classify_many(ds.biopsy[test_idx])
    return int(np.sum(pred == ds.labels[test_idx])), int(test_idx.size)


def _cv_accuracy(fn, ds, plans, config, kernel, gamma, C1, C2):
    items = [(ds, folds, r, f, config.seed, kernel, gamma, C1, C2)
             for r, folds in enumerate(plans) for f in range(config.folds)]
    counts = _map_jobs(fn, items, config.jobs)
    return sum(c for c, _ in counts) / sum(n for _, n in counts)


def tune(ds: Dataset, kernel, config: CVConfig, *, gamma="median") -> TuneResult:
    """Two-stage grid search.

    Stage 1 runs at the middle C1 of the grid and keeps every C2 whose
    tumoral-vs-normal CV accuracy exceeds ``screen_threshold``. Stage 2 scans
    C1 at each kept C2 and maximizes biopsy class 1 vs 2 CV accuracy; ties go
    to the smaller C1, then the smaller C2. Folds are shared by all grid
    points.
    """
    plans = [stratified_folds(ds.labels, config.folds, _repeat_seed(config.seed, -1 - r))
             for r in range(config.tune_repeats)]
    c1_mid = config.C1_grid[len(config.C1_grid) // 2]
    result = TuneResult(math.nan, math.nan)
    for C2 in config.C2_grid:
        result.screening[C2] = _cv_accuracy(_screen_fold, ds, plans, config, kernel, gamma, c1_mid, C2)
    result.retained = [C2 for C2, acc in result.screening.items() if acc > config.screen_threshold]
    if not result.retained:
        best = max(result.screening.items(), key=lambda kv: kv[1])
        raise TuningError(f"no C2 passed screening at threshold {config.screen_threshold}; "
                          f"best was C2={best[0]:g} with accuracy {best[1]:.4f}")
    for C2 in result.retained:
        for C1 in config.C1_grid:
            result.stage2[(C1, C2)] = _cv_accuracy(_biopsy_fold, ds, plans, config, kernel, gamma, C1, C2)
    result.C1, result.C2 = select_best(result.stage2)
    return result


def select_best(scores: dict[tuple[float, float], float]) -> tuple[float, float]:
    """Highest score; ties to the smaller C1, then the smaller C2."""
    return min(scores, key=lambda key: (-scores[key], key[0], key[1]))


# -- rank-sum test ----------------------------------------------------------------------

def _doubled_midranks(values) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    order = np.argsort(v, kind="stable")
    sv = v[order]
    ranks = np.empty(len(v), dtype=np.int64)
    i = 0
    while i < len(sv):
        j = i
        while j + 1 < len(sv) and sv[j + 1] == sv[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + 1) + (j + 1)  # twice the average rank
        i = j + 1
    return ranks


def _exact_upper_tail(ranks2: np.ndarray, n_a: int, observed2: int) -> float:
    """P(sum of n_a ranks drawn without replacement >= observed) by counting
    subsets with a dynamic program over (subset size, rank sum)."""
    total = int(ranks2.sum())
    ways = [[0] * (total + 1) for _ in range(n_a + 1)]
    ways[0][0] = 1
    for r in ranks2:
        r = int(r)
        for k in range(min(n_a, len(ranks2)), 0, -1):
            prev, cur = ways[k - 1], ways[k]
            for s in range(total - r, -1, -1):
                if prev[s]:
                    cur[s + r] += prev[s]
    row = ways[n_a]
    return sum(row[observed2:]) / math.comb(len(ranks2), n_a)


def rank_sum_one_sided(a, b, method: str = "auto") -> float:
    """p-value for the alternative that ``a`` is stochastically greater than ``b``.

    ``method`` is 'exact' (subset counting over mid-ranks), 'normal' (tie- and
    continuity-corrected approximation) or 'auto' (exact up to 20 samples).
    """
    a = list(a)
    b = list(b)
    if not a or not b:
        raise ValueError("both samples must be nonempty")
    n, m = len(a), len(b)
    N = n + m
    ranks2 = _doubled_midranks(a + b)
    w2 = int(ranks2[:n].sum())
    if method == "auto":
        method = "exact" if N <= EXACT_LIMIT else "normal"
    if method == "exact":
        return _exact_upper_tail(ranks2, n, w2)
    if method != "normal":
        raise ValueError(f"unknown method {method!r}")
    _, counts = np.unique(np.asarray(a + b, dtype=np.float64), return_counts=True)
    ties = float(np.sum(counts.astype(float) ** 3 - counts))
    var = n * m / 12.0 * ((N + 1) - ties / (N * (N - 1)))
    if var <= 0:
        return 1.0
    z = (w2 / 2.0 - n * (N + 1) / 2.0 - 0.5) / math.sqrt(var)
    return float(norm.sf(z))

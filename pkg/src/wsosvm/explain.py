"""Shapley attributions of the decision value h(x).

A feature (or feature group) that is "absent" takes its value from a
background sample, and the value of a coalition is the mean decision value
over those background completions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .features import PER_CONTRAST
from .rng import stream

AGGREGATIONS = ("sum-then-abs", "abs-then-sum")


def contrast_groups(dim: int, block: int = PER_CONTRAST) -> list[np.ndarray]:
    if dim % block:
        raise ValueError(f"feature length {dim} is not a multiple of the block size {block}")
    return [np.arange(k * block, (k + 1) * block) for k in range(dim // block)]


def aggregate_to_contrast(values, block: int = PER_CONTRAST) -> np.ndarray:
    """Signed sum of feature values inside each contrast block."""
    v = np.asarray(values, dtype=np.float64)
    if v.shape[-1] % block:
        raise ValueError(f"length {v.shape[-1]} is not a multiple of the block size {block}")
    return v.reshape(*v.shape[:-1], v.shape[-1] // block, block).sum(axis=-1)


def _shapley_weights(n: int) -> np.ndarray:
    """Weight of a coalition of size s not containing the player."""
    return np.array([math.factorial(s) * math.factorial(n - s - 1) / math.factorial(n)
                     for s in range(n)])


def shap_exact_groups(model, x, background, groups=None) -> tuple[np.ndarray, float]:
    """Exact Shapley values of feature groups by enumerating every coalition.

    Returns ``(values, baseline)`` where baseline is the mean decision value
    over the background.
    """
    x = np.asarray(x, dtype=np.float64)
    B = np.atleast_2d(np.asarray(background, dtype=np.float64))
    if B.shape[0] == 0:
        raise ValueError("background is empty")
    if B.shape[1] != x.shape[0]:
        raise ValueError(f"background length {B.shape[1]} does not match x length {x.shape[0]}")
    if groups is None:
        groups = contrast_groups(x.shape[0])
    G = len(groups)
    member = np.zeros((G, x.shape[0]), dtype=bool)
    for g, idx in enumerate(groups):
        member[g, idx] = True
    masks = (np.arange(2 ** G)[:, None] >> np.arange(G)[None, :]) & 1  # (2^G, G)
    present = masks.astype(bool) @ member  # features present per coalition
    rows = np.where(present[:, None, :], x[None, None, :], B[None, :, :])
    values = model.decision_values(rows.reshape(-1, x.shape[0])).reshape(2 ** G, B.shape[0]).mean(axis=1)
    weights = _shapley_weights(G)
    size = masks.sum(axis=1)
    phi = np.zeros(G)
    for g in range(G):
        without = np.flatnonzero(masks[:, g] == 0)
        with_g = without | (1 << g)
        phi[g] = np.sum(weights[size[without]] * (values[with_g] - values[without]))
    return phi, float(values[0])


def shap_sampled_features(model, x, background, draws: int = 2000, seed: int = 0,
                          batch: int = 32) -> tuple[np.ndarray, np.ndarray, float]:
    """Permutation-sampling Shapley estimates per feature.

    Each draw pairs a random feature ordering with a background sample (the
    background is cycled, reshuffled on every pass) and switches features
    from background to ``x`` one at a time. Returns ``(estimates,
    standard_errors, baseline)``.
    """
    if draws < 1:
        raise ValueError("draws must be at least 1")
    x = np.asarray(x, dtype=np.float64)
    B = np.atleast_2d(np.asarray(background, dtype=np.float64))
    if B.shape[0] == 0:
        raise ValueError("background is empty")
    dim = x.shape[0]
    rng = stream(seed, "shap-sampling")
    order = []
    while len(order) < draws:
        order.extend(rng.permutation(B.shape[0]).tolist())
    order = np.array(order[:draws])
    perms = np.array([rng.permutation(dim) for _ in range(draws)])
    total = np.zeros(dim)
    total_sq = np.zeros(dim)
    for s in range(0, draws, batch):
        p = perms[s:s + batch]
        b = B[order[s:s + batch]]
        n = len(p)
        ranks = np.empty_like(p)
        ranks[np.arange(n)[:, None], p] = np.arange(dim)[None, :]
        # after k steps the features ranked below k come from x
        switched = np.arange(dim + 1)[None, :, None] > ranks[:, None, :]
        pts = np.where(switched, x[None, None, :], b[:, None, :])
        h = model.decision_values(pts.reshape(-1, dim)).reshape(n, dim + 1)
        step_gain = np.diff(h, axis=1)  # gain of the feature switched at each step
        contrib = np.empty((n, dim))
        contrib[np.arange(n)[:, None], p] = step_gain
        total += contrib.sum(axis=0)
        total_sq += (contrib ** 2).sum(axis=0)
    mean = total / draws
    if draws > 1:
        var = np.maximum(total_sq / draws - mean ** 2, 0.0) * draws / (draws - 1)
        se = np.sqrt(var / draws)
    else:
        se = np.full(dim, np.inf)
    baseline = float(model.decision_values(B).mean())
    return mean, se, baseline


@dataclass
class ShapReport:
    values: np.ndarray  # (samples, groups) signed group values
    summary: np.ndarray  # per-group mean absolute value
    baseline: float
    background: np.ndarray  # background rows used
    mode: str
    aggregation: str = "sum-then-abs"
    standard_errors: np.ndarray | None = None  # (samples, features), sampled mode only


def explain(model, X, background=None, mode: str = "exact-group", draws: int = 2000,
            seed: int = 0, aggregation: str = "sum-then-abs") -> ShapReport:
    """Attribute h for every row of ``X`` and summarize per contrast.

    The summary is the mean over samples of |group value| ("sum-then-abs");
    with sampled features, "abs-then-sum" instead averages the sum of
    absolute feature values within each group.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if aggregation not in AGGREGATIONS:
        raise ValueError(f"unknown aggregation {aggregation!r}")
    if background is None:
        background = model.background
    if background is None or len(background) == 0:
        raise ValueError("no background samples available")
    background = np.atleast_2d(np.asarray(background, dtype=np.float64))
    if mode == "exact-group":
        if aggregation != "sum-then-abs":
            raise ValueError("abs-then-sum needs per-feature values (sampled-feature mode)")
        rows = [shap_exact_groups(model, x, background) for x in X]
        values = np.array([r[0] for r in rows])
        baseline = rows[0][1]
        return ShapReport(values, np.abs(values).mean(axis=0), baseline, background, mode, aggregation)
    if mode != "sampled-feature":
        raise ValueError(f"unknown mode {mode!r}")
    feats, ses = [], []
    baseline = math.nan
    for i, x in enumerate(X):
        est, se, baseline = shap_sampled_features(model, x, background, draws, _sample_seed(seed, i))
        feats.append(est)
        ses.append(se)
    feats = np.array(feats)
    values = aggregate_to_contrast(feats)
    if aggregation == "sum-then-abs":
        summary = np.abs(values).mean(axis=0)
    else:
        summary = aggregate_to_contrast(np.abs(feats)).mean(axis=0)
    return ShapReport(values, summary, baseline, background, mode, aggregation, np.array(ses))


def _sample_seed(seed: int, i: int) -> int:
    return int(stream(seed, "shap-sample", i).integers(0, 2**63))


__all__ = ["aggregate_to_contrast", "contrast_groups", "explain", "shap_exact_groups",
           "shap_sampled_features", "ShapReport"]

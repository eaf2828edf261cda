"""Stride-1 sliding-window prediction maps, joint co-alteration maps and
alteration proportions.

Label planes use -1 for pixels outside the map (not in the AOI or window not
fully inside the image) and 0/1/2 for predicted classes. Joint planes use -1
outside, 0 none, 1 A only, 2 B only, 3 both.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .features import PER_CONTRAST, feature_matrix
from .formats import model_digest, write_labels_csv, write_pgm
from .stack import ContrastStack
from .wso import TrainedModel

OUTSIDE = -1
NONE, A_ONLY, B_ONLY, BOTH = 0, 1, 2, 3
LABEL_PALETTE = {OUTSIDE: 0, 0: 64, 1: 128, 2: 255}
JOINT_PALETTE = {OUTSIDE: 0, NONE: 32, A_ONLY: 128, B_ONLY: 192, BOTH: 255}
CHUNK = 1024


@dataclass
class PredictionMap:
    labels: np.ndarray
    gene: str = ""
    model_digest: str = ""

    @property
    def classified(self) -> np.ndarray:
        return self.labels >= 0


def map_centers(stack: ContrastStack) -> np.ndarray:
    """AOI pixels whose window fits, in row-major order."""
    return np.argwhere(stack.aoi & stack.window_fit_mask())


def _check_layout(model: TrainedModel, stack: ContrastStack) -> None:
    names = stack.channel_names
    if model.dim != PER_CONTRAST * len(names):
        raise ValueError(f"model expects {model.dim} features but the stack has {len(names)} "
                         f"channels ({PER_CONTRAST * len(names)} features)")
    if model.channels and tuple(model.channels) != tuple(names):
        raise ValueError(f"model channels {list(model.channels)} do not match stack channels {names}")


def predict_map(model: TrainedModel, stack: ContrastStack, gene: str = "", jobs: int = 1) -> PredictionMap:
    """Classify the window around every mappable AOI pixel.

    Pixels are processed in fixed chunks whatever ``jobs`` is, so the output
    does not depend on the degree of parallelism.
    """
    _check_layout(model, stack)
    centers = map_centers(stack)
    labels = np.full(stack.shape, OUTSIDE, dtype=np.int64)
    chunks = [centers[s:s + CHUNK] for s in range(0, len(centers), CHUNK)]

    def run(c):
        return model.classify_many(feature_matrix(stack, c))

    if jobs > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run, chunks))
    else:
        results = [run(c) for c in chunks]
    for c, lab in zip(chunks, results):
        labels[c[:, 0], c[:, 1]] = lab
    return PredictionMap(labels, gene, model_digest(model))


def joint_map(map_a: PredictionMap, map_b: PredictionMap) -> np.ndarray:
    a, b = map_a.labels, map_b.labels
    if a.shape != b.shape:
        raise ValueError(f"map geometry mismatch: {a.shape} vs {b.shape}")
    out = (a == 2).astype(np.int64) * A_ONLY + (b == 2).astype(np.int64) * B_ONLY
    out[(a <= 0) | (b <= 0)] = OUTSIDE
    return out


def proportions(pmap: PredictionMap) -> tuple[float, float, float]:
    """(altered, non-altered, class 0) fractions over classified pixels."""
    lab = pmap.labels[pmap.classified]
    if lab.size == 0:
        raise ValueError("map has no classified pixels")
    counts = np.bincount(lab, minlength=3)
    return tuple(float(v) for v in counts[[2, 1, 0]] / lab.size)


def palette_bytes(plane, palette) -> np.ndarray:
    plane = np.asarray(plane)
    out = np.zeros(plane.shape, dtype=np.uint8)
    seen = np.zeros(plane.shape, dtype=bool)
    for value, byte in palette.items():
        hit = plane == value
        out[hit] = byte
        seen |= hit
    if not seen.all():
        raise ValueError(f"plane holds values outside the palette {sorted(palette)}")
    return out


def render(plane, path, joint: bool = False) -> None:
    """Write a P5 graymap with the fixed palette plus a CSV of the raw labels
    next to it (same stem, ``.csv``)."""
    path = Path(path)
    try:
        write_pgm(path, palette_bytes(plane, JOINT_PALETTE if joint else LABEL_PALETTE))
        write_labels_csv(path.with_suffix(".csv"), plane)
    except OSError as exc:
        raise OSError(f"cannot write map to {path}: {exc.strerror}") from exc

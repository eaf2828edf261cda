"""Synthetic multi-contrast tumour phantoms with planted gene-alteration fields,
plus the biopsy / unlabeled / normal sampling policy.

Geometry: an elliptical tumoral AOI in the left half of the image made of a
necrotic core, a contrast-enhancing (CE) ring and a non-enhancing (NE) rim;
the contralateral region is its left-right mirror image. Each gene gets a
smooth random blob field thresholded so that a target fraction of the AOI is
altered (label 2); the rest of the AOI is label 1.

Channel intensities are a region baseline, plus per-gene shifts and texture
gain where the gene is altered, plus smooth correlated texture and white
noise. Planes are rounded to float32 so that in-memory and on-disk stacks
give identical features.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from .stack import DEFAULT_CHANNELS, HALF_HI, HALF_LO, WINDOW, ContrastStack
from .rng import stream

MIN_SIZE = 32
MARGIN = 4

# region baselines per channel: (normal tissue, CE, NE, necrosis)
_BASELINES = {
    "T1+C": (1.0, 3.0, 1.4, 0.4),
    "T2": (1.0, 1.8, 2.4, 2.8),
    "MD": (1.0, 1.3, 1.6, 2.2),
    "FA": (1.0, 0.6, 0.7, 0.3),
    "rCBV": (1.0, 2.2, 1.6, 0.3),
}
_GENERIC_BASELINE = (1.0, 1.8, 1.4, 0.5)


@dataclass(frozen=True)
class GeneSignature:
    """How an altered region shows up: mean shift and texture gain per channel."""

    name: str
    shifts: dict = field(default_factory=dict)
    texture_gain: dict = field(default_factory=dict)
    prevalence: float = 0.4
    blob_count: int = 4
    radius_range: tuple = (0.15, 0.35)  # fraction of the AOI's larger semi-axis

    def __post_init__(self):
        if not 0 < self.prevalence < 1:
            raise ValueError(f"prevalence for {self.name} must be in (0, 1)")
        if self.blob_count < 1:
            raise ValueError("blob_count must be at least 1")


DEFAULT_GENES = (
    GeneSignature("EGFR", {"rCBV": 1.0, "T2": 0.6}, {"rCBV": 0.5}),
    GeneSignature("PDGFRA", {"T1+C": 0.8, "FA": 0.5}, {"FA": 0.5}),
    GeneSignature("PTEN", {"MD": 0.7}, {"MD": 0.5}),
)


@dataclass(frozen=True)
class PhantomConfig:
    width: int = 128
    height: int = 128
    seed: int = 0
    channels: tuple = DEFAULT_CHANNELS
    genes: tuple = DEFAULT_GENES
    noise: float = 0.05
    texture: float = 0.15
    texture_sigma: float = 1.5
    necrosis: bool = True

    def __post_init__(self):
        if self.width < MIN_SIZE or self.height < MIN_SIZE:
            raise ValueError(f"phantom dimensions must be at least {MIN_SIZE}, "
                             f"got {self.width}x{self.height}")
        if self.noise < 0 or self.texture < 0:
            raise ValueError("noise and texture must be non-negative")
        if not self.channels:
            raise ValueError("at least one channel is required")
        names = [g.name for g in self.genes]
        if len(set(names)) != len(names):
            raise ValueError("gene names must be unique")
        for g in self.genes:
            unknown = (set(g.shifts) | set(g.texture_gain)) - set(self.channels)
            if unknown:
                raise ValueError(f"gene {g.name} refers to unknown channels {sorted(unknown)}")


class PlacementError(RuntimeError):
    pass


def _ellipse(h, w, cy, cx, ry, rx):
    yy, xx = np.mgrid[0:h, 0:w]
    return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2


def geometry(config: PhantomConfig) -> dict[str, np.ndarray]:
    """Region masks: CE, NE, necrosis, contralateral."""
    h, w = config.height, config.width
    cy, cx = (h - 1) / 2.0, 0.3 * (w - 1)
    ry, rx = 0.3 * h, 0.17 * w
    e = _ellipse(h, w, cy, cx, ry, rx)
    aoi = e <= 1.0
    core = e <= 0.35 ** 2 if config.necrosis else np.zeros((h, w), bool)
    inner = e <= 0.7 ** 2
    masks = {
        "CE": inner & ~core,
        "NE": aoi & ~inner,
        "necrosis": core,
    }
    masks["contralateral"] = (aoi | core)[:, ::-1].copy()
    if np.any(masks["contralateral"] & aoi):
        raise ValueError("image too narrow: contralateral region overlaps the AOI")
    for name, m in masks.items():
        if not _fits_with_margin(m):
            raise ValueError(f"image too small to fit the {name} region with margins")
    return masks


def _fits_with_margin(mask) -> bool:
    return bool(np.any(mask & valid_window_centers(mask.shape)))


def valid_window_centers(shape, margin: int = MARGIN) -> np.ndarray:
    """Centers whose 8x8 window stays ``margin`` pixels clear of the border."""
    h, w = shape
    out = np.zeros((h, w), dtype=bool)
    r0, r1 = margin + HALF_LO, h - margin - HALF_HI
    c0, c1 = margin + HALF_LO, w - margin - HALF_HI
    if r1 > r0 and c1 > c0:
        out[r0:r1, c0:c1] = True
    return out


def _truth_field(config, gene, masks, aoi):
    h, w = config.height, config.width
    rng = stream(config.seed, "phantom", "blobs", gene.name)
    rows, cols = np.nonzero(aoi)
    span = max(rows.max() - rows.min(), cols.max() - cols.min()) / 2.0
    yy, xx = np.mgrid[0:h, 0:w]
    fld = np.zeros((h, w))
    for _ in range(gene.blob_count):
        k = rng.integers(len(rows))
        rad = span * rng.uniform(*gene.radius_range)
        fld += np.exp(-((yy - rows[k]) ** 2 + (xx - cols[k]) ** 2) / (2 * rad * rad))
    cut = np.quantile(fld[aoi], 1.0 - gene.prevalence)
    truth = np.zeros((h, w), dtype=np.int8)
    truth[aoi] = np.where(fld[aoi] > cut, 2, 1)
    return truth


def _texture(config, channel):
    rng = stream(config.seed, "phantom", "texture", channel)
    t = gaussian_filter(rng.standard_normal((config.height, config.width)), config.texture_sigma,
                        mode="reflect")
    sd = t.std()
    return t / sd if sd > 0 else t


def generate(config: PhantomConfig = PhantomConfig()) -> ContrastStack:
    masks = geometry(config)
    aoi = masks["CE"] | masks["NE"]
    truth = {g.name: _truth_field(config, g, masks, aoi) for g in config.genes}
    region = np.zeros((config.height, config.width), dtype=np.int64)
    region[masks["CE"]] = 1
    region[masks["NE"]] = 2
    region[masks["necrosis"]] = 3
    channels = {}
    for ch in config.channels:
        base = np.asarray(_BASELINES.get(ch, _GENERIC_BASELINE))[region]
        gain = np.ones_like(base)
        for g in config.genes:
            altered = truth[g.name] == 2
            base = base + g.shifts.get(ch, 0.0) * altered
            gain = gain + g.texture_gain.get(ch, 0.0) * altered
        plane = base + config.texture * gain * _texture(config, ch)
        if config.noise > 0:
            plane = plane + config.noise * stream(config.seed, "phantom", "noise", ch).standard_normal(
                plane.shape)
        channels[ch] = plane.astype(np.float32).astype(np.float64)
    return ContrastStack(channels, masks, truth)


# -- sampling -------------------------------------------------------------------------

def _window_sum(mask: np.ndarray) -> np.ndarray:
    """Number of set pixels in the 8x8 window around each center."""
    h, w = mask.shape
    padded = np.zeros((h + WINDOW, w + WINDOW))
    padded[HALF_LO:HALF_LO + h, HALF_LO:HALF_LO + w] = mask
    c = np.cumsum(np.cumsum(padded, axis=0), axis=1)
    c = np.pad(c, ((1, 0), (1, 0)))
    r = np.arange(h)
    q = np.arange(w)
    # window rows r-4..r+3 map to padded rows r..r+7
    return (c[r[:, None] + WINDOW, q[None, :] + WINDOW] - c[r[:, None], q[None, :] + WINDOW]
            - c[r[:, None] + WINDOW, q[None, :]] + c[r[:, None], q[None, :]])


def biopsy_candidates(stack: ContrastStack, gene: str, purity: float = 1.0) -> np.ndarray:
    """Centers eligible for a biopsy of ``gene``.

    The center lies in the AOI outside necrosis, its window fits with margin,
    and at least ``purity`` of the window's pixels are AOI pixels carrying
    the center's label.
    """
    truth = stack.truth[gene]
    ok = stack.aoi & ~stack.masks["necrosis"] & valid_window_centers(stack.shape)
    need = purity * WINDOW * WINDOW - 1e-9
    for label in (1, 2):
        same = _window_sum((truth == label) & stack.aoi & ~stack.masks["necrosis"])
        ok &= ~((truth == label) & (same < need))
    return ok


def sample_biopsies(stack: ContrastStack, gene: str, n: int, min_separation: float = 4.0,
                    seed: int = 0, purity: float = 1.0):
    """Seeded rejection sampling of biopsy centers.

    Returns ``(centers, labels)``; centers are pairwise at least
    ``min_separation`` apart. Gives up after ``100 * n`` draws.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    cand = np.argwhere(biopsy_candidates(stack, gene, purity))
    if len(cand) == 0:
        raise PlacementError(f"no eligible biopsy centers for {gene}")
    rng = stream(seed, "biopsy", gene)
    chosen = []
    for _ in range(100 * n):
        p = cand[rng.integers(len(cand))]
        if all(np.hypot(*(p - q)) >= min_separation for q in chosen):
            chosen.append(p)
            if len(chosen) == n:
                break
    if len(chosen) < n:
        raise PlacementError(f"placed only {len(chosen)} of {n} biopsies with separation "
                             f"{min_separation} within {100 * n} draws")
    centers = np.array(chosen, dtype=np.int64)
    return centers, stack.truth[gene][centers[:, 0], centers[:, 1]].astype(np.int64)


def _pick(mask, n, rng, what):
    cand = np.argwhere(mask)
    if n > len(cand):
        raise PlacementError(f"need {n} {what} centers, only {len(cand)} eligible")
    idx = np.sort(rng.choice(len(cand), n, replace=False)) if n else np.empty(0, np.int64)
    return cand[idx].astype(np.int64).reshape(-1, 2)


def sample_unlabeled(stack: ContrastStack, n: int, seed: int = 0):
    """``n/2`` CE and ``n/2`` NE centers outside necrosis.

    Returns ``(centers, regions)`` with regions 'CE' or 'NE'.
    """
    if n < 0 or n % 2:
        raise ValueError(f"unlabeled count must be even and non-negative, got {n}")
    ok = valid_window_centers(stack.shape) & ~stack.masks["necrosis"]
    parts, tags = [], []
    for region in ("CE", "NE"):
        pts = _pick(stack.masks[region] & ok, n // 2, stream(seed, "unlabeled", region), region)
        parts.append(pts)
        tags += [region] * len(pts)
    return np.vstack(parts), np.array(tags)


def sample_normal(stack: ContrastStack, n: int, seed: int = 0) -> np.ndarray:
    ok = stack.masks["contralateral"] & valid_window_centers(stack.shape)
    return _pick(ok, n, stream(seed, "normal"), "contralateral")


def cohort(stack: ContrastStack, gene: str, n_biopsy: int, n_unlabeled: int, n_normal: int,
           seed: int = 0, min_separation: float = 4.0, purity: float = 1.0):
    """Feature-level dataset for one gene plus the centers it was built from.

    The unlabeled and normal pools are what cross-validation later draws its
    per-fold auxiliary samples from.
    """
    from .features import feature_matrix
    from .harness import Dataset

    bc, labels = sample_biopsies(stack, gene, n_biopsy, min_separation, seed, purity)
    uc, regions = sample_unlabeled(stack, n_unlabeled, seed)
    nc = sample_normal(stack, n_normal, seed)
    ds = Dataset(feature_matrix(stack, bc), labels, feature_matrix(stack, uc),
                 feature_matrix(stack, nc), regions)
    return ds, {"biopsy": bc, "unlabeled": uc, "normal": nc}

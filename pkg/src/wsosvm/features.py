"""Windowed image features: 18 first-order statistics, 26 GLCM and 12 Gabor
values per contrast.

Every public single-window function has a batched twin working on arrays of
shape ``(B, 8, 8)``; the single-window versions are thin wrappers so both
paths produce identical bits.
"""

from __future__ import annotations

import numpy as np

from .stack import HALF_HI, HALF_LO, WINDOW, BoundsError, ContrastStack

LEVELS = 256
GLCM_DISTANCES = (1, 3)
# (row, col) offsets for 0, 45, 90 and 135 degrees at unit distance
GLCM_DIRECTIONS = ((0, 1), (-1, 1), (-1, 0), (-1, -1))
GABOR_SIGMAS = (0.4, 0.7)
GABOR_FREQUENCIES = (0.1, 0.3, 0.5)
GABOR_THETAS = (0.0, np.pi / 4, np.pi / 2, 3 * np.pi / 4)
GABOR_SIZE = 7

STAT_NAMES = (
    "mean", "std", "energy", "total_energy", "entropy", "minimum", "p10", "p90",
    "maximum", "median", "iqr", "range", "mad", "rmad", "rms", "skewness",
    "kurtosis", "uniformity",
)
HARALICK_NAMES = (
    "asm", "contrast", "correlation", "sum_squares_variance", "idm",
    "sum_average", "sum_variance", "sum_entropy", "entropy",
    "difference_variance", "difference_entropy", "imc1", "imc2",
)
N_STAT = len(STAT_NAMES)
N_GLCM = len(HARALICK_NAMES) * len(GLCM_DISTANCES)
N_GABOR = 2 * len(GABOR_SIGMAS) * len(GABOR_FREQUENCIES)
PER_CONTRAST = N_STAT + N_GLCM + N_GABOR

_EPS_ROUND = 1e-9


def block_names() -> list[str]:
    names = [f"stat_{n}" for n in STAT_NAMES]
    for d in GLCM_DISTANCES:
        names += [f"glcm_d{d}_{n}_avg" for n in HARALICK_NAMES]
    for s in GABOR_SIGMAS:
        for f in GABOR_FREQUENCIES:
            names += [f"gabor_s{s}_f{f}_mean", f"gabor_s{s}_f{f}_std"]
    return names


def feature_names(channels) -> list[str]:
    block = block_names()
    return [f"{ch}:{n}" for ch in channels for n in block]


def feature_manifest(channels) -> str:
    """Feature name table as ``index,name`` lines."""
    return "".join(f"{i},{n}\n" for i, n in enumerate(feature_names(channels)))


# -- windows -----------------------------------------------------------------

def extract_window(stack: ContrastStack, contrast: str, center) -> np.ndarray:
    r, c = int(center[0]), int(center[1])
    if not stack.window_fits(r, c):
        raise BoundsError((r, c), stack.shape)
    plane = stack.channels[contrast]
    return plane[r - HALF_LO:r + HALF_HI + 1, c - HALF_LO:c + HALF_HI + 1].copy()


def extract_windows(plane: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Gather ``(B, 8, 8)`` windows from one plane; centers must already fit."""
    centers = np.asarray(centers, dtype=np.int64).reshape(-1, 2)
    off = np.arange(WINDOW) - HALF_LO
    rows = centers[:, 0, None, None] + off[None, :, None]
    cols = centers[:, 1, None, None] + off[None, None, :]
    return plane[rows, cols]


# -- quantization -------------------------------------------------------------

def quantize_batch(w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    flat = w.reshape(w.shape[0], -1)
    lo = flat.min(axis=1, keepdims=True)
    hi = flat.max(axis=1, keepdims=True)
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    t = (LEVELS - 1) * (flat - lo) / safe
    # half-away-from-zero on t >= 0; the slack absorbs last-ulp drift from
    # affine pre-transforms so ties round the same way
    q = np.floor(t + 0.5 + _EPS_ROUND)
    q = np.where(span > 0, q, 0.0)
    return np.clip(q, 0, LEVELS - 1).astype(np.int64).reshape(w.shape)


def quantize(window) -> np.ndarray:
    return quantize_batch(np.asarray(window, dtype=np.float64)[None])[0]


# -- first-order statistics ------------------------------------------------------

def _level_histogram(q: np.ndarray) -> np.ndarray:
    b = q.shape[0]
    flat = q.reshape(b, -1)
    idx = flat + LEVELS * np.arange(b)[:, None]
    counts = np.bincount(idx.ravel(), minlength=b * LEVELS).reshape(b, LEVELS)
    return counts / flat.shape[1]


def _plogp2(p: np.ndarray) -> np.ndarray:
    out = np.zeros_like(p)
    nz = p > 0
    out[nz] = p[nz] * np.log2(p[nz])
    return out


def statistical_features_batch(w: np.ndarray, q: np.ndarray | None = None) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    b = w.shape[0]
    x = w.reshape(b, -1)
    if q is None:
        q = quantize_batch(w)
    n = x.shape[1]

    mean = x.mean(axis=1)
    dev = x - mean[:, None]
    m2 = (dev ** 2).mean(axis=1)
    std = np.sqrt(m2)
    energy = (x ** 2).sum(axis=1)
    p10, p25, p50, p75, p90 = np.percentile(x, [10, 25, 50, 75, 90], axis=1)
    lo = x.min(axis=1)
    hi = x.max(axis=1)
    mad = np.abs(dev).mean(axis=1)

    inner = (x >= p10[:, None]) & (x <= p90[:, None])
    cnt = inner.sum(axis=1)
    inner_mean = np.where(inner, x, 0.0).sum(axis=1) / cnt
    rmad = np.where(inner, np.abs(x - inner_mean[:, None]), 0.0).sum(axis=1) / cnt

    rms = np.sqrt(energy / n)
    flat = (hi == lo) | (m2 <= 0)  # variance can underflow for tiny spans
    safe_m2 = np.where(flat, 1.0, m2)
    skew = np.where(flat, 0.0, (dev ** 3).mean(axis=1) / safe_m2 ** 1.5)
    kurt = np.where(flat, 0.0, (dev ** 4).mean(axis=1) / safe_m2 ** 2)

    hist = _level_histogram(q)
    entropy = -_plogp2(hist).sum(axis=1)
    uniformity = (hist ** 2).sum(axis=1)

    # total energy uses a unit voxel volume
    cols = [mean, std, energy, energy * 1.0, entropy, lo, p10, p90, hi, p50,
            p75 - p25, hi - lo, mad, rmad, rms, skew, kurt, uniformity]
    return np.stack(cols, axis=1)


def statistical_features(window) -> np.ndarray:
    return statistical_features_batch(np.asarray(window, dtype=np.float64)[None])[0]


# -- GLCM ------------------------------------------------------------------------

def _pair_slices(d: int, dr: int, dc: int):
    r0, r1 = max(0, -dr * d), WINDOW - max(0, dr * d)
    c0, c1 = max(0, -dc * d), WINDOW - max(0, dc * d)
    src = (slice(r0, r1), slice(c0, c1))
    dst = (slice(r0 + dr * d, r1 + dr * d), slice(c0 + dc * d, c1 + dc * d))
    return src, dst


def glcm_matrices(qwindow, distance: int) -> list[dict[tuple[int, int], float]]:
    """Sparse symmetric normalized GLCMs for the four directions.

    Keys are gray levels ``(i, j)``; values are probabilities.
    """
    q = np.asarray(qwindow, dtype=np.int64)
    out = []
    for dr, dc in GLCM_DIRECTIONS:
        src, dst = _pair_slices(distance, dr, dc)
        a, b = q[src].ravel(), q[dst].ravel()
        counts: dict[tuple[int, int], int] = {}
        for i, j in zip(a.tolist(), b.tolist()):
            counts[(i, j)] = counts.get((i, j), 0) + 1
            counts[(j, i)] = counts.get((j, i), 0) + 1
        total = 2 * a.size
        out.append({k: v / total for k, v in counts.items()})
    return out


def _row_counts(keys: np.ndarray, width: int) -> np.ndarray:
    """For each entry, how many entries in its row share its key.

    Keys must lie in ``[0, width)``.
    """
    b = keys.shape[0]
    idx = keys + width * np.arange(b)[:, None]
    return np.bincount(idx.ravel(), minlength=b * width)[idx]


def _level_ranks(q: np.ndarray) -> tuple[np.ndarray, int]:
    """Dense per-window rank of each gray level (0 = smallest present)."""
    b = q.shape[0]
    flat = q.reshape(b, -1)
    present = np.zeros((b, LEVELS), dtype=bool)
    present[np.arange(b)[:, None], flat] = True
    rank_of = np.cumsum(present, axis=1) - 1
    ranks = np.take_along_axis(rank_of, flat, axis=1).reshape(q.shape)
    return ranks, int(present.sum(axis=1).max())


def _haralick_pairs(a, c, ra, rc, width) -> np.ndarray:
    """13 Haralick features of the symmetric GLCM built from pixel pairs.

    ``a`` and ``c`` are ``(B, P)`` gray levels of the two ends of each pair;
    ``ra``/``rc`` are the same levels as dense per-window ranks below
    ``width``. The mirrored matrix has 2P entries, each cell with probability
    count/2P. Sums over cells are rewritten as means over pair entries, which
    keeps the 256-level matrix implicit; mirror symmetry means the P original
    entries carry the same averages as all 2P.
    """
    b, npair = a.shape
    m = 2 * npair
    lo = np.minimum(ra, rc)
    hi = np.maximum(ra, rc)
    cell = _row_counts(lo * width + hi, width * width) * (1 + (lo == hi)) / m
    levels = np.concatenate([a, c], axis=1)
    plev = _row_counts(levels, LEVELS) / m
    s = a + c
    d = np.abs(a - c)
    psum = 2 * _row_counts(s, 2 * LEVELS - 1) / m
    pdiff = 2 * _row_counts(d, LEVELS) / m

    fa = a.astype(np.float64)
    fc = c.astype(np.float64)
    asm = cell.mean(axis=1)
    diff = fa - fc
    contrast = (diff ** 2).mean(axis=1)
    fl = levels.astype(np.float64)
    mu = fl.mean(axis=1)
    var = ((fl - mu[:, None]) ** 2).mean(axis=1)
    cov = ((fa - mu[:, None]) * (fc - mu[:, None])).mean(axis=1)
    corr = np.where(var > 0, cov / np.where(var > 0, var, 1.0), 0.0)
    idm = (1.0 / (1.0 + diff ** 2)).mean(axis=1)
    fs = s.astype(np.float64)
    sum_avg = fs.mean(axis=1)
    sum_var = ((fs - sum_avg[:, None]) ** 2).mean(axis=1)
    sum_ent = -np.log2(psum).mean(axis=1)
    fd = d.astype(np.float64)
    diff_var = ((fd - fd.mean(axis=1)[:, None]) ** 2).mean(axis=1)
    diff_ent = -np.log2(pdiff).mean(axis=1)
    hxy = -np.log2(cell).mean(axis=1)
    hx = -np.log2(plev).mean(axis=1)
    # HXY1 = HXY2 = HX + HY for any GLCM, and HX = HY under symmetry
    hxy1 = 2.0 * hx
    imc1 = np.where(hx > 0, (hxy - hxy1) / np.where(hx > 0, hx, 1.0), 0.0)
    # exp(-2 (HXY2 - HXY)) is defined on natural-log entropies
    gap_nats = (hxy1 - hxy) * np.log(2.0)
    imc2 = np.sqrt(np.clip(1.0 - np.exp(-2.0 * gap_nats), 0.0, None))
    return np.stack([asm, contrast, corr, var, idm, sum_avg, sum_var, sum_ent,
                     hxy, diff_var, diff_ent, imc1, imc2], axis=1)


def glcm_features_batch(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.int64)
    b = q.shape[0]
    ranks, width = _level_ranks(q)
    out = np.empty((b, N_GLCM))
    col = 0
    for d in GLCM_DISTANCES:
        acc = np.zeros((b, len(HARALICK_NAMES)))
        for dr, dc in GLCM_DIRECTIONS:
            src, dst = _pair_slices(d, dr, dc)
            acc += _haralick_pairs(q[:, src[0], src[1]].reshape(b, -1),
                                   q[:, dst[0], dst[1]].reshape(b, -1),
                                   ranks[:, src[0], src[1]].reshape(b, -1),
                                   ranks[:, dst[0], dst[1]].reshape(b, -1), width)
        out[:, col:col + len(HARALICK_NAMES)] = acc / len(GLCM_DIRECTIONS)
        col += len(HARALICK_NAMES)
    return out


def glcm_features(qwindow) -> np.ndarray:
    return glcm_features_batch(np.asarray(qwindow, dtype=np.int64)[None])[0]


# -- Gabor -------------------------------------------------------------------------

def gabor_kernel(sigma: float, frequency: float, theta: float) -> np.ndarray:
    """Zero-mean real (even) Gabor kernel on a 7x7 grid."""
    half = GABOR_SIZE // 2
    y, x = np.mgrid[-half:half + 1, -half:half + 1].astype(np.float64)
    xr = x * np.cos(theta) + y * np.sin(theta)
    yr = -x * np.sin(theta) + y * np.cos(theta)
    g = np.exp(-(xr ** 2 + yr ** 2) / (2.0 * sigma ** 2)) * np.cos(2.0 * np.pi * frequency * xr)
    return g - g.mean()


def gabor_bank() -> np.ndarray:
    """Kernels ordered (sigma, frequency, theta); shape ``(6, 4, 7, 7)``."""
    return np.array([[[gabor_kernel(s, f, t) for t in GABOR_THETAS]
                      for f in GABOR_FREQUENCIES] for s in GABOR_SIGMAS]).reshape(
        len(GABOR_SIGMAS) * len(GABOR_FREQUENCIES), len(GABOR_THETAS), GABOR_SIZE, GABOR_SIZE)


_BANK = gabor_bank()


def gabor_magnitude_batch(q: np.ndarray) -> np.ndarray:
    """Orientation-averaged response magnitude, shape ``(B, 6, 8, 8)``."""
    x = np.asarray(q, dtype=np.float64)
    b = x.shape[0]
    half = GABOR_SIZE // 2
    padded = np.pad(x, ((0, 0), (half, half), (half, half)), mode="symmetric")
    patches = np.lib.stride_tricks.sliding_window_view(padded, (GABOR_SIZE, GABOR_SIZE), axis=(1, 2))
    patches = np.ascontiguousarray(patches).reshape(b * WINDOW * WINDOW, GABOR_SIZE * GABOR_SIZE)
    kernels = _BANK.reshape(-1, GABOR_SIZE * GABOR_SIZE).T
    resp = (patches @ kernels).reshape(b, WINDOW, WINDOW, _BANK.shape[0], _BANK.shape[1])
    mag = np.abs(resp).mean(axis=4)
    return np.moveaxis(mag, 3, 1)


def gabor_features_batch(q: np.ndarray) -> np.ndarray:
    mag = gabor_magnitude_batch(q)
    b = mag.shape[0]
    flat = mag.reshape(b, mag.shape[1], -1)
    out = np.empty((b, mag.shape[1], 2))
    out[:, :, 0] = flat.mean(axis=2)
    out[:, :, 1] = flat.std(axis=2)
    return out.reshape(b, -1)


def gabor_features(window) -> np.ndarray:
    """Gabor features of a raw window (quantized internally)."""
    return gabor_features_batch(quantize_batch(np.asarray(window, dtype=np.float64)[None]))[0]


# -- full vectors ---------------------------------------------------------------------

def block_features_batch(w: np.ndarray) -> np.ndarray:
    """56 features per window for a ``(B, 8, 8)`` batch of raw windows."""
    w = np.asarray(w, dtype=np.float64)
    if not np.all(np.isfinite(w)):
        raise ValueError("window contains non-finite intensities")
    q = quantize_batch(w)
    return np.concatenate([statistical_features_batch(w, q), glcm_features_batch(q),
                           gabor_features_batch(q)], axis=1)


def feature_matrix(stack: ContrastStack, centers, chunk: int = 256) -> np.ndarray:
    """Feature vectors for many centers, shape ``(N, 56 * channels)``.

    Results do not depend on ``chunk``.
    """
    centers = np.asarray(centers, dtype=np.int64).reshape(-1, 2)
    for r, c in centers:
        if not stack.window_fits(int(r), int(c)):
            raise BoundsError((int(r), int(c)), stack.shape)
    n = centers.shape[0]
    names = stack.channel_names
    out = np.empty((n, PER_CONTRAST * len(names)))
    for k, ch in enumerate(names):
        plane = stack.channels[ch]
        for s in range(0, n, chunk):
            w = extract_windows(plane, centers[s:s + chunk])
            out[s:s + chunk, k * PER_CONTRAST:(k + 1) * PER_CONTRAST] = block_features_batch(w)
    return out


def feature_vector(stack: ContrastStack, center) -> np.ndarray:
    return feature_matrix(stack, [center])[0]

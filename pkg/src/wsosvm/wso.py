"""Weakly supervised ordinal SVM: dual assembly, training and the decision rule.

Labels are ordered 0 < 1 < 2 (normal brain, gene not altered, gene altered).
The decision value h(x) is compared with two thresholds b0 <= b1:

    class 2 if h - b1 >= 0
    class 1 if h - b1 <  0 and h - b0 >= 0
    class 0 if h - b0 <  0

The dual variables are ordered (alpha1, alpha2, beta0, beta12); beta12 spans
the unlabeled tumoral samples *and* the labelled biopsies, which therefore
appear twice.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .kernels import KernelSpec, Standardizer, cross_kernel, gram, median_gamma
from .qpsolve import DualSolution, KKTReport, QPInstance, solve
from .rng import stream

# block codes of support samples
ALPHA1, ALPHA2, BETA0, BETA12 = 0, 1, 2, 3
BLOCK_SIGNS = np.array([-1.0, 1.0, -1.0, 1.0])
BACKGROUND_CAP = 64


def _as_matrix(name, X, dim=None):
    X = np.asarray(X, dtype=np.float64)
    if X.size == 0:
        X = X.reshape(0, dim if dim is not None else (X.shape[-1] if X.ndim == 2 else 0))
    if X.ndim != 2:
        raise ValueError(f"{name} must be a 2-D array of feature vectors")
    return X


@dataclass
class TrainingSet:
    class1: np.ndarray
    class2: np.ndarray
    unlabeled: np.ndarray
    normal: np.ndarray

    def __post_init__(self):
        self.class1 = _as_matrix("class1", self.class1)
        self.class2 = _as_matrix("class2", self.class2)
        dim = self.class1.shape[1]
        self.unlabeled = _as_matrix("unlabeled", self.unlabeled, dim)
        self.normal = _as_matrix("normal", self.normal, dim)
        if len(self.class1) == 0 or len(self.class2) == 0:
            raise ValueError("both biopsy classes need at least one sample")
        for name in ("class2", "unlabeled", "normal"):
            if getattr(self, name).shape[1] != dim:
                raise ValueError(f"feature length mismatch in {name}: "
                                 f"{getattr(self, name).shape[1]} vs {dim}")
        if len(self.normal) == 0:
            raise ValueError("at least one normal sample is required")

    @property
    def dim(self) -> int:
        return self.class1.shape[1]

    @property
    def sizes(self) -> tuple[int, int, int, int]:
        """(n1, n2, m0, m12)."""
        return len(self.class1), len(self.class2), len(self.normal), len(self.unlabeled)

    def dual_samples(self) -> np.ndarray:
        """Samples in dual-variable order, biopsies repeated in the tumoral pool."""
        return np.vstack([self.class1, self.class2, self.normal,
                          self.class1, self.class2, self.unlabeled])

    def blocks(self) -> np.ndarray:
        n1, n2, m0, m12 = self.sizes
        return np.repeat([ALPHA1, ALPHA2, BETA0, BETA12], [n1, n2, m0, n1 + n2 + m12])

    def map(self, fn) -> "TrainingSet":
        return TrainingSet(fn(self.class1), fn(self.class2), fn(self.unlabeled), fn(self.normal))


def assemble_dual(ts: TrainingSet, kernel: KernelSpec, C1: float, C2: float,
                  class_weight: tuple[float, float] = (1.0, 1.0), K=None) -> QPInstance:
    """Dual QP on the given (already standardized) vectors.

    ``class_weight`` scales C1 for class 1 and class 2 biopsies respectively.
    """
    if not (C1 > 0 and C2 > 0):
        raise ValueError("C1 and C2 must be positive")
    blocks = ts.blocks()
    y = BLOCK_SIGNS[blocks]
    if K is None:
        K = gram(kernel, ts.dual_samples())
    Q = y[:, None] * K * y[None, :]
    ineq = np.where(blocks == ALPHA1, -1.0, np.where(blocks == ALPHA2, 1.0, 0.0))
    upper = np.where(blocks == ALPHA1, C1 * class_weight[0],
                     np.where(blocks == ALPHA2, C1 * class_weight[1], C2))
    return QPInstance(Q, np.ones(len(y)), y, ineq, np.zeros(len(y)), upper)


@dataclass(frozen=True)
class TrainedModel:
    support: np.ndarray  # standardized support vectors
    coef: np.ndarray  # signed coefficients y_i * gamma_i
    block: np.ndarray  # dual block of each support vector
    b0: float
    b1: float
    kernel: KernelSpec
    standardizer: Standardizer
    C1: float
    C2: float
    objective: float = 0.0
    kkt_max_residual: float = 0.0
    background: np.ndarray | None = None  # raw feature vectors
    channels: tuple = ()  # contrast names of the feature layout, if known
    provenance: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.standardizer.mean.shape[0]

    def decision_values(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.dim:
            raise ValueError(f"feature length mismatch: {X.shape[1]} vs {self.dim}")
        if self.coef.size == 0:
            return np.zeros(X.shape[0])
        return cross_kernel(self.kernel, self.standardizer.transform(X), self.support) @ self.coef

    def classify_many(self, X) -> np.ndarray:
        return labels_from_h(self.decision_values(X), self.b0, self.b1)


def labels_from_h(h, b0, b1) -> np.ndarray:
    h = np.asarray(h, dtype=np.float64)
    return np.where(h - b1 >= 0, 2, np.where(h - b0 >= 0, 1, 0)).astype(np.int64)


def decision_value(model: TrainedModel, x) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("decision_value expects a single feature vector")
    return float(model.decision_values(x[None])[0])


def classify(model: TrainedModel, x) -> int:
    return int(labels_from_h(decision_value(model, x), model.b0, model.b1))


def _interval(cands_lo, cands_hi):
    lo = max(cands_lo, default=-np.inf)
    hi = min(cands_hi, default=np.inf)
    return lo, hi


def recover_biases(solution: DualSolution, ts: TrainingSet, kernel: KernelSpec,
                   C1: float, C2: float, K=None, tol: float = 1e-8,
                   upper=None) -> tuple[float, float]:
    """Thresholds from the margin conditions of interior multipliers.

    A biopsy with interior alpha sits on its b1 margin (b1 = h + 1 for class 1,
    h - 1 for class 2); a weak-supervision sample with interior beta sits on
    its b0 margin (h + 1 normal, h - 1 tumoral). Each bias averages its
    candidates. Without interior multipliers, the bias is the midpoint of the
    interval allowed by the saturated ones, or the solver's multiplier value
    when that interval is half-open. When the ordering multiplier mu is
    positive the ordering constraint is tight and both thresholds coincide,
    so all candidates are pooled.
    """
    blocks = ts.blocks()
    y = BLOCK_SIGNS[blocks]
    g = solution.gamma
    if K is None:
        K = gram(kernel, ts.dual_samples())
    h = K @ (y * g)
    if upper is None:
        upper = np.where(blocks <= ALPHA2, C1, C2)
    eps = 1e-6 * upper
    interior = (g > eps) & (g < upper - eps)
    at_zero = g <= eps
    alpha = blocks <= ALPHA2

    def side(mask):
        cand = (h + np.where(y < 0, 1.0, -1.0))[mask & interior]
        # saturated multipliers give one-sided bounds on the threshold
        t = h + np.where(y < 0, 1.0, -1.0)
        lo = list(t[mask & at_zero & (y < 0)]) + list(t[mask & ~at_zero & ~interior & (y > 0)])
        hi = list(t[mask & at_zero & (y > 0)]) + list(t[mask & ~at_zero & ~interior & (y < 0)])
        return list(cand), _interval(lo, hi)

    lam_b0 = -solution.lagrange_eq
    lam_b1 = solution.lagrange_ineq - solution.lagrange_eq

    def settle(cand, interval, fallback):
        if cand:
            return float(np.mean(cand))
        lo, hi = interval
        if np.isfinite(lo) and np.isfinite(hi):
            return 0.5 * (lo + hi)
        return float(np.clip(fallback, lo, hi))

    c1, iv1 = side(alpha)
    c0, iv0 = side(~alpha)
    if solution.mu > tol * max(1.0, float(upper.max())):
        iv = (max(iv0[0], iv1[0]), min(iv0[1], iv1[1]))
        b = settle(c0 + c1, iv, 0.5 * (lam_b0 + lam_b1))
        return b, b
    # a threshold fixed by interior multipliers constrains the other one
    # through b0 <= b1
    if c1 or not c0:
        b1 = settle(c1, iv1, lam_b1)
        b0 = settle(c0, (iv0[0], min(iv0[1], b1)), lam_b0)
    else:
        b0 = settle(c0, iv0, lam_b0)
        b1 = settle(c1, (max(iv1[0], b0), iv1[1]), lam_b1)
    if b0 > b1:
        b0 = b1 = 0.5 * (b0 + b1)
    return float(b0), float(b1)


def config_digest(config: dict) -> str:
    text = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode()).hexdigest()


def _background(ts: TrainingSet, seed: int) -> np.ndarray:
    pool = np.vstack([ts.normal, ts.unlabeled])
    if len(pool) <= BACKGROUND_CAP:
        return pool.copy()
    idx = np.sort(stream(seed, "explain-background").choice(len(pool), BACKGROUND_CAP, replace=False))
    return pool[idx]


def resolve_kernel(kind: str, gamma, standardized_samples) -> KernelSpec:
    """KernelSpec from a kind and a gamma that may be the string 'median'."""
    if kind == "linear":
        return KernelSpec("linear")
    if gamma is None or gamma == "median":
        return KernelSpec("gaussian", median_gamma(standardized_samples))
    return KernelSpec("gaussian", float(gamma))


def train(ts: TrainingSet, kernel: KernelSpec | str = "gaussian", C1: float = 1.0,
          C2: float = 1.0, *, gamma="median", class_weight=(1.0, 1.0), seed: int = 0,
          tol: float = 1e-8, channels=()) -> TrainedModel:
    """Standardize, solve the dual and keep the support set.

    ``kernel`` is either a KernelSpec or a kind name; with a kind name the
    gaussian bandwidth comes from ``gamma`` ('median' for the median
    heuristic on the standardized training samples).
    """
    raw = np.vstack([ts.class1, ts.class2, ts.normal, ts.unlabeled])
    std = Standardizer.fit(raw)
    sts = ts.map(std.transform)
    if not isinstance(kernel, KernelSpec):
        kernel = resolve_kernel(kernel, gamma, std.transform(raw))
    K = gram(kernel, sts.dual_samples())
    qp = assemble_dual(sts, kernel, C1, C2, class_weight, K=K)
    sol = solve(qp, tol=tol)
    b0, b1 = recover_biases(sol, sts, kernel, C1, C2, K=K, tol=tol, upper=qp.upper)
    blocks = sts.blocks()
    keep = sol.gamma != 0
    coef = BLOCK_SIGNS[blocks] * sol.gamma
    provenance = {
        "seed": int(seed),
        "config_digest": config_digest({"kernel": kernel.kind, "gamma": kernel.gamma, "C1": C1,
                                        "C2": C2, "class_weight": list(class_weight),
                                        "sizes": list(ts.sizes)}),
    }
    return TrainedModel(
        support=sts.dual_samples()[keep], coef=coef[keep], block=blocks[keep],
        b0=b0, b1=b1, kernel=kernel, standardizer=std, C1=float(C1), C2=float(C2),
        objective=sol.objective, kkt_max_residual=sol.kkt.max_residual,
        background=_background(ts, seed), channels=tuple(channels), provenance=provenance)


__all__ = ["TrainingSet", "TrainedModel", "assemble_dual", "train", "recover_biases",
           "decision_value", "classify", "labels_from_h", "resolve_kernel", "KKTReport"]

"""Latent-space geometry on backbone representations.

Every analysis consumes unit-normalized directions, so results do not
depend on the length of a representation.  Sums over samples use
``math.fsum`` (exactly rounded), which makes set-level outputs independent
of sample order bit for bit.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .errors import (
    ClassMismatchError,
    ConvergenceError,
    DataError,
    DegenerateCenterError,
    DegenerateEmbeddingError,
    DimensionMismatchError,
    EmptyClassError,
    InsufficientDataError,
    NumericError,
)
from .rng import SplitMix64

NORM_EPS = 1e-12


@dataclass
class EmbeddingSet:
    ids: list
    H: np.ndarray
    labels: list = None
    concentrations: np.ndarray = None

    def __post_init__(self):
        self.H = np.asarray(self.H, dtype=np.float64)
        if self.H.ndim != 2:
            raise DataError(f"representations must be a 2-D array, got shape {self.H.shape}")
        n = self.H.shape[0]
        self.ids = [str(i) for i in self.ids]
        if len(self.ids) != n:
            raise DataError(f"{len(self.ids)} ids for {n} representations")
        if len(set(self.ids)) != n:
            raise DataError("ids must be unique")
        if self.labels is not None:
            self.labels = [str(x) for x in self.labels]
            if len(self.labels) != n:
                raise DataError(f"{len(self.labels)} labels for {n} representations")
        if self.concentrations is not None:
            self.concentrations = np.asarray(self.concentrations, dtype=np.float64)
            if self.concentrations.shape != (n,):
                raise DataError("concentrations must have one value per representation")
        if not np.all(np.isfinite(self.H)):
            raise NumericError("non-finite values in representations")

    @classmethod
    def from_arrays(cls, H, labels=None, concentrations=None, ids=None):
        H = np.asarray(H, dtype=np.float64)
        if ids is None:
            ids = [f"s{i:05d}" for i in range(H.shape[0])]
        return cls(list(ids), H, None if labels is None else list(labels), concentrations)

    def __len__(self):
        return self.H.shape[0]

    @property
    def dim(self):
        return self.H.shape[1]

    @property
    def classes(self):
        """Labels in order of first appearance."""
        self._require_labels()
        return list(dict.fromkeys(self.labels))

    @property
    def has_concentrations(self):
        return self.concentrations is not None and bool(np.all(np.isfinite(self.concentrations)))

    def _require_labels(self):
        if self.labels is None:
            raise DataError("this operation needs labeled embeddings")

    def subset(self, mask_or_index):
        idx = np.arange(len(self))[mask_or_index]
        return EmbeddingSet(
            [self.ids[i] for i in idx],
            self.H[idx],
            None if self.labels is None else [self.labels[i] for i in idx],
            None if self.concentrations is None else self.concentrations[idx],
        )

    def members(self, label):
        self._require_labels()
        return np.array([lab == label for lab in self.labels])


@dataclass
class CenterSet:
    classes: list
    raw: np.ndarray
    normalized: np.ndarray

    @property
    def dim(self):
        return self.raw.shape[1]


@dataclass
class SimilarityMatrix:
    row_labels: list
    col_labels: list
    values: np.ndarray

    def to_dict(self):
        return {
            "rows": list(self.row_labels),
            "cols": list(self.col_labels),
            "values": self.values.tolist(),
        }


@dataclass
class GradientReport:
    healthy_label: str
    classes: list = field(default_factory=list)
    spearman: dict = field(default_factory=dict)
    degenerate: dict = field(default_factory=dict)
    consistency: dict = field(default_factory=dict)
    levels: dict = field(default_factory=dict)
    skipped: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "healthy_label": self.healthy_label,
            "classes": list(self.classes),
            "spearman": dict(self.spearman),
            "degenerate": dict(self.degenerate),
            "direction_consistency": dict(self.consistency),
            "levels": {k: list(v) for k, v in self.levels.items()},
            "skipped": dict(self.skipped),
        }


def _fsum_rows(X):
    """Column sums of X computed with exactly rounded summation."""
    return np.array([math.fsum(col) for col in np.asarray(X, dtype=np.float64).T])


def normalize_rows(H):
    H = np.asarray(H, dtype=np.float64)
    norms = np.sqrt(np.sum(H * H, axis=1))
    bad = np.flatnonzero(norms < NORM_EPS)
    if bad.size:
        raise DegenerateEmbeddingError(
            f"representation {int(bad[0])} has norm {norms[bad[0]]:.3g} < {NORM_EPS}"
        )
    return H / norms[:, None]


def _check_dim(E, centers):
    if E.dim != centers.dim:
        raise DimensionMismatchError(
            f"embeddings have dimension {E.dim} but centers have dimension {centers.dim}"
        )


def class_centers(E, classes=None):
    """Class means and their unit-normalized directions."""
    E._require_labels()
    if classes is None:
        classes = E.classes
    labels = np.asarray(E.labels, dtype=object)
    raw = np.zeros((len(classes), E.dim))
    for k, name in enumerate(classes):
        mask = labels == name
        if not mask.any():
            raise EmptyClassError(f"class '{name}' has no members")
        raw[k] = _fsum_rows(E.H[mask]) / mask.sum()
    norms = np.sqrt(np.sum(raw * raw, axis=1))
    bad = np.flatnonzero(norms < NORM_EPS)
    if bad.size:
        raise DegenerateCenterError(
            f"center of class '{classes[bad[0]]}' has norm {norms[bad[0]]:.3g} < {NORM_EPS}"
        )
    return CenterSet(list(classes), raw, raw / norms[:, None])


def mean_similarity_matrix(E_test, centers):
    """Entry (l, k): mean over test members of class l of cos(h_i, c_k)."""
    E_test._require_labels()
    _check_dim(E_test, centers)
    unknown = sorted(set(E_test.labels) - set(centers.classes))
    if unknown:
        raise ClassMismatchError(f"test classes without a center: {unknown}")
    Hn = normalize_rows(E_test.H)
    sims = Hn @ centers.normalized.T
    labels = np.asarray(E_test.labels, dtype=object)
    rows = [c for c in centers.classes if np.any(labels == c)]
    values = np.array([_fsum_rows(sims[labels == c]) / np.sum(labels == c) for c in rows])
    return SimilarityMatrix(rows, list(centers.classes), values.reshape(len(rows), -1))


def center_similarity(centers):
    C = centers.normalized
    values = C @ C.T
    values = 0.5 * (values + values.T)
    np.fill_diagonal(values, 1.0)
    return SimilarityMatrix(list(centers.classes), list(centers.classes), values)


def pairwise_stats(E):
    """Min, mean and max cosine similarity over distinct unordered pairs."""
    H = E.H if isinstance(E, EmbeddingSet) else np.asarray(E, dtype=np.float64)
    n = H.shape[0]
    if n < 2:
        raise InsufficientDataError(f"pairwise statistics need at least 2 samples, got {n}")
    Hn = normalize_rows(H)
    iu = np.triu_indices(n, k=1)
    vals = (Hn @ Hn.T)[iu]
    return {
        "min": float(vals.min()),
        "mean": math.fsum(vals) / vals.size,
        "max": float(vals.max()),
        "n_pairs": int(vals.size),
    }


def center_similarities(H, centers):
    """Cosine similarity of every row of H to every normalized center (N x K)."""
    H = np.atleast_2d(np.asarray(H, dtype=np.float64))
    if H.shape[1] != centers.dim:
        raise DimensionMismatchError(
            f"representations have dimension {H.shape[1]} but centers have {centers.dim}"
        )
    return normalize_rows(H) @ centers.normalized.T


def anomaly_scores(h, centers):
    """Per-class anomaly score ``1 - cos(h, c_k)``; 2-D input gives one row per sample."""
    h = np.asarray(h, dtype=np.float64)
    scores = np.clip(1.0 - center_similarities(h, centers), 0.0, 2.0)
    return scores[0] if h.ndim == 1 else scores


def nearest_center(h, centers):
    """Index of the most similar center; ties go to the lowest class index.

    A single vector gives an int, a matrix gives one index per row.
    """
    idx = np.argmin(np.atleast_2d(anomaly_scores(h, centers)), axis=1)
    return int(idx[0]) if np.ndim(h) == 1 else idx


def detect_novel(E, centers, threshold=0.7):
    """Flag samples whose best center similarity is below ``threshold``."""
    if not (0 < threshold <= 1):
        raise ValueError(f"threshold must lie in (0, 1], got {threshold}")
    H = E.H if isinstance(E, EmbeddingSet) else E
    max_sim = center_similarities(H, centers).max(axis=1)
    return max_sim < threshold, max_sim


def drift_score(window, centers):
    """1 - mean best-center similarity of a window of representations."""
    H = window.H if isinstance(window, EmbeddingSet) else np.asarray(window, dtype=np.float64)
    if H.shape[0] == 0:
        raise InsufficientDataError("drift window is empty")
    best = center_similarities(H, centers).max(axis=1)
    return float(min(2.0, max(0.0, 1.0 - math.fsum(best) / best.size)))


def average_ranks(x):
    """1-based ranks with ties replaced by their average rank."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(x.size)
    xs = x[order]
    i = 0
    while i < x.size:
        j = i
        while j + 1 < x.size and xs[j + 1] == xs[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(x, y):
    """Spearman rank correlation; returns (rho, degenerate) with rho=0 for constant input."""
    rx, ry = average_ranks(x), average_ranks(y)
    if rx.size < 2:
        return 0.0, True
    dx, dy = rx - rx.mean(), ry - ry.mean()
    sxx, syy = math.fsum(dx * dx), math.fsum(dy * dy)
    if sxx == 0 or syy == 0:
        return 0.0, True
    rho = math.fsum(dx * dy) / math.sqrt(sxx * syy)
    return float(min(1.0, max(-1.0, rho))), False


def concentration_gradient(E, healthy_label="Normal", centers=None, min_levels=3):
    """Rank correlation of dose with distance from the healthy center, per class.

    Also reports direction consistency: the mean pairwise cosine between the
    per-level mean displacements from the healthy center.
    """
    E._require_labels()
    if not E.has_concentrations:
        raise DataError("concentration gradient needs concentrations for every sample")
    if centers is None:
        centers = class_centers(E)
    if healthy_label not in centers.classes:
        raise ClassMismatchError(f"healthy class '{healthy_label}' has no center")
    _check_dim(E, centers)
    healthy = centers.normalized[centers.classes.index(healthy_label)]
    Hn = normalize_rows(E.H)
    score = 1.0 - Hn @ healthy
    labels = np.asarray(E.labels, dtype=object)
    report = GradientReport(healthy_label)
    for name in E.classes:
        if name == healthy_label:
            continue
        mask = labels == name
        conc = E.concentrations[mask]
        levels = sorted(set(conc.tolist()))
        if len(levels) < min_levels:
            report.skipped[name] = f"{len(levels)} concentration levels (< {min_levels})"
            continue
        rho, degenerate = spearman(conc, score[mask])
        dirs = []
        for level in levels:
            sel = Hn[mask][conc == level]
            d = _fsum_rows(sel) / sel.shape[0] - healthy
            norm = math.sqrt(math.fsum(d * d))
            if norm >= NORM_EPS:
                dirs.append(d / norm)
        pair_cos = [float(dirs[i] @ dirs[j]) for i in range(len(dirs)) for j in range(i + 1, len(dirs))]
        consistency = math.fsum(pair_cos) / len(pair_cos) if pair_cos else 0.0
        report.classes.append(name)
        report.spearman[name] = rho
        report.degenerate[name] = degenerate
        report.consistency[name] = float(min(1.0, max(-1.0, consistency)))
        report.levels[name] = levels
    return report


def auroc(scores_pos, scores_neg):
    """Probability that a positive outscores a negative (ties count one half)."""
    pos = np.asarray(scores_pos, dtype=np.float64)
    neg = np.asarray(scores_neg, dtype=np.float64)
    if pos.size == 0 or neg.size == 0:
        raise InsufficientDataError("AUROC needs at least one sample in each group")
    ranks = average_ranks(np.concatenate([pos, neg]))
    u = math.fsum(ranks[: pos.size]) - pos.size * (pos.size + 1) / 2.0
    return u / (pos.size * neg.size)


def _power_iteration(C, start, previous, tol, max_iter):
    v = start.copy()
    for prev in previous:
        v -= (v @ prev) * prev
    norm = np.linalg.norm(v)
    if norm == 0:
        raise NumericError("power iteration start vector lies in the deflated span")
    v /= norm
    scale = max(np.abs(C).max(), np.finfo(float).tiny)
    for it in range(1, max_iter + 1):
        w = C @ v
        for prev in previous:
            w -= (w @ prev) * prev
        wn = np.linalg.norm(w)
        if wn <= 1e-14 * scale:
            # remaining spectrum is numerically zero
            return v, 0.0, it
        w /= wn
        if w @ v < 0:
            w = -w
        delta = np.linalg.norm(w - v)
        v = w
        if delta < tol:
            return v, float(v @ C @ v), it
    raise ConvergenceError(
        f"power iteration did not converge in {max_iter} iterations", iterations=max_iter
    )


def pca2(E, tol=1e-10, max_iter=10000):
    """Top-2 principal components by power iteration with deflation.

    Returns ``(coords, components, explained)`` where ``coords`` is N x 2,
    ``components`` is 2 x D with orthonormal rows (largest-magnitude entry
    positive) and ``explained`` holds the explained-variance fractions.
    """
    H = E.H if isinstance(E, EmbeddingSet) else np.asarray(E, dtype=np.float64)
    n, d = H.shape
    if n < 3:
        raise InsufficientDataError(f"pca2 needs at least 3 samples, got {n}")
    X = H - _fsum_rows(H) / n
    C = (X.T @ X) / (n - 1)
    C = 0.5 * (C + C.T)
    total = float(np.trace(C))
    start = SplitMix64(0).normal(d)
    comps, lams = [], []
    deflated = C.copy()
    for _ in range(min(2, d)):
        v, lam, _ = _power_iteration(deflated, start, comps, tol, max_iter)
        v = v * (1.0 if v[np.argmax(np.abs(v))] >= 0 else -1.0)
        comps.append(v)
        lams.append(max(lam, 0.0))
        deflated = deflated - lam * np.outer(v, v)
    components = np.array(comps)
    coords = X @ components.T
    explained = np.array(lams) / total if total > 0 else np.zeros(len(lams))
    if coords.shape[1] < 2:
        coords = np.column_stack([coords, np.zeros(n)])
        components = np.vstack([components, np.zeros(d)])
        explained = np.append(explained, 0.0)
    return coords, components, explained


class ClassCenterModel(ClassifierMixin, BaseEstimator):
    """Nearest-normalized-center classifier with anomaly and novelty scores.

    ``fit`` builds one unit-norm center per class; ``transform`` returns cosine
    similarities to every center; ``predict`` picks the most similar center;
    ``score_samples`` returns the best similarity (low = novel).
    """

    def __init__(self, novelty_threshold=0.7):
        self.novelty_threshold = novelty_threshold

    def fit(self, X, y):
        X = check_array(X, dtype=np.float64)
        y = np.asarray(y)
        E = EmbeddingSet.from_arrays(X, [str(v) for v in y])
        classes = np.unique(y).tolist()
        self.centers_ = class_centers(E, [str(c) for c in classes])
        self.classes_ = np.asarray(classes)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "centers_")
        return center_similarities(check_array(X, dtype=np.float64), self.centers_)

    def anomaly_scores(self, X):
        return np.clip(1.0 - self.transform(X), 0.0, 2.0)

    def predict(self, X):
        return self.classes_[np.argmax(self.transform(X), axis=1)]

    def score_samples(self, X):
        return self.transform(X).max(axis=1)

    def is_novel(self, X):
        return self.score_samples(X) < self.novelty_threshold

    def drift_score(self, X):
        check_is_fitted(self, "centers_")
        return drift_score(check_array(X, dtype=np.float64), self.centers_)


class PCA2(TransformerMixin, BaseEstimator):
    """Two-component PCA by deflated power iteration, for latent-space plots."""

    def __init__(self, tol=1e-10, max_iter=10000):
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        _, self.components_, self.explained_variance_ratio_ = pca2(X, self.tol, self.max_iter)
        self.mean_ = _fsum_rows(X) / X.shape[0]
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "components_")
        X = check_array(X, dtype=np.float64)
        return (X - self.mean_) @ self.components_.T

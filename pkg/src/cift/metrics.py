"""Quality metrics: margin-based feature quality, affinity-order quality,
top-k affinity error ratio, and CMC/mAP retrieval evaluation.

All functions are pure numpy; they look only at values (never gradients), so
callers detach torch tensors before measuring.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateInputError, ParameterError


def _as_matrix(X, name: str = "matrix") -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ParameterError(f"{name} must be 2-D, got shape {X.shape}")
    if not np.isfinite(X).all():
        raise ParameterError(f"{name} contains non-finite entries")
    return X


def _as_labels(labels, n: int, name: str = "labels") -> np.ndarray:
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ParameterError(f"{name} must have shape ({n},), got {labels.shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        raise ParameterError(f"{name} must be integers, got dtype {labels.dtype}")
    return labels.astype(np.int64)


def pairwise_distances(X, Y=None, distance: str = "euclidean") -> np.ndarray:
    """Distance matrix between rows of X and rows of Y (Y defaults to X)."""
    X = _as_matrix(X, "X")
    Y = X if Y is None else _as_matrix(Y, "Y")
    if distance == "euclidean":
        sq = (X**2).sum(1)[:, None] + (Y**2).sum(1)[None, :] - 2.0 * (X @ Y.T)
        return np.sqrt(np.maximum(sq, 0.0))
    if distance == "cosine":
        nx = np.linalg.norm(X, axis=1)
        ny = np.linalg.norm(Y, axis=1)
        if (nx == 0).any() or (ny == 0).any():
            raise DegenerateInputError("cosine distance undefined for zero-norm rows")
        return 1.0 - (X @ Y.T) / np.outer(nx, ny)
    raise ParameterError(f"unknown distance '{distance}' (euclidean, cosine)")


def margin_quality(X, labels, distance: str = "euclidean") -> float:
    """Averaged margin Q: per anchor, mean over all (positive, negative) pairs of
    D(anchor, negative) - D(anchor, positive); then averaged over anchors."""
    X = _as_matrix(X, "X")
    labels = _as_labels(labels, X.shape[0])
    D = pairwise_distances(X, distance=distance)
    same = labels[:, None] == labels[None, :]
    pos = same & ~np.eye(len(labels), dtype=bool)
    neg = ~same
    n_pos, n_neg = pos.sum(1), neg.sum(1)
    if (n_pos == 0).any() or (n_neg == 0).any():
        raise DegenerateInputError("every sample needs >= 1 positive and >= 1 negative")
    mean_pos = (D * pos).sum(1) / n_pos
    mean_neg = (D * neg).sum(1) / n_neg
    return float((mean_neg - mean_pos).mean())


def _pos_neg_masks(A: np.ndarray, labels, col_labels) -> tuple[np.ndarray, np.ndarray]:
    n, m = A.shape
    labels = _as_labels(labels, n)
    if col_labels is None:
        if n != m:
            raise ParameterError(
                f"square mode needs a square matrix, got {A.shape}; "
                "pass col_labels for rectangular affinities"
            )
        col_labels = labels
        off_diag = ~np.eye(n, dtype=bool)
    else:
        col_labels = _as_labels(col_labels, m, "col_labels")
        off_diag = np.ones((n, m), dtype=bool)
    same = labels[:, None] == col_labels[None, :]
    return same & off_diag, ~same & off_diag


def affinity_quality(A, labels, col_labels=None) -> float:
    """Fraction of rows whose minimum positive affinity beats the maximum
    negative affinity (every positive above every negative).

    Square affinities compare a set of samples with itself; the self column is
    ignored there.  Rectangular affinities take explicit column labels.
    """
    A = _as_matrix(A, "affinity")
    pos, neg = _pos_neg_masks(A, labels, col_labels)
    if (pos.sum(1) == 0).any() or (neg.sum(1) == 0).any():
        raise DegenerateInputError("every row needs >= 1 positive and >= 1 negative column")
    min_pos = np.where(pos, A, np.inf).min(axis=1)
    max_neg = np.where(neg, A, -np.inf).max(axis=1)
    return float((min_pos > max_neg).mean())


def affinity_error_ratio(A, labels, top: int = 4, col_labels=None) -> float:
    """Fraction of the per-row top-`top` affinity entries that are ground-truth
    negatives, averaged over rows (the self column is ignored in square mode)."""
    A = _as_matrix(A, "affinity")
    pos, neg = _pos_neg_masks(A, labels, col_labels)
    candidates = pos | neg
    n_cand = int(candidates.sum(1).min())
    if not 1 <= top <= n_cand:
        raise ParameterError(f"top must be in [1, {n_cand}], got {top}")
    errors = np.empty(A.shape[0])
    for i, row in enumerate(A):
        cols = np.flatnonzero(candidates[i])
        order = cols[np.argsort(-row[cols], kind="stable")]
        errors[i] = neg[i, order[:top]].mean()
    return float(errors.mean())


@dataclass
class RetrievalResult:
    cmc: np.ndarray
    map: float

    def __post_init__(self):
        self.cmc = np.asarray(self.cmc, dtype=np.float64)
        if self.cmc.ndim != 1 or len(self.cmc) == 0:
            raise ParameterError("cmc must be a nonempty vector")
        if (np.diff(self.cmc) < 0).any() or self.cmc[0] < 0 or self.cmc[-1] > 1:
            raise ParameterError("cmc must be non-decreasing within [0, 1]")
        if not 0 <= self.map <= 1:
            raise ParameterError(f"map must lie in [0, 1], got {self.map}")

    def to_json(self) -> dict:
        return {"cmc": [float(c) for c in self.cmc], "map": float(self.map)}

    @classmethod
    def from_json(cls, d: dict) -> "RetrievalResult":
        return cls(cmc=np.asarray(d["cmc"], dtype=np.float64), map=float(d["map"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")

    def cmc_to_csv(self, path: str | Path) -> None:
        lines = ["rank,cmc"] + [f"{r + 1},{repr(float(c))}" for r, c in enumerate(self.cmc)]
        Path(path).write_text("\n".join(lines) + "\n")


def cmc_map(dist, q_labels, g_labels) -> RetrievalResult:
    """Single-gallery-pass CMC and mAP; ranking ties break by gallery index."""
    dist = _as_matrix(dist, "dist")
    n_q, n_g = dist.shape
    q_labels = _as_labels(q_labels, n_q, "q_labels")
    g_labels = _as_labels(g_labels, n_g, "g_labels")
    hits = np.zeros(n_g)
    aps = np.empty(n_q)
    for i in range(n_q):
        order = np.argsort(dist[i], kind="stable")
        matches = g_labels[order] == q_labels[i]
        if not matches.any():
            raise DegenerateInputError(f"query {i} has no positive in the gallery")
        hits[matches.argmax()] += 1
        ranks = np.flatnonzero(matches) + 1
        aps[i] = float((np.arange(1, len(ranks) + 1) / ranks).mean())
    return RetrievalResult(cmc=np.cumsum(hits) / n_q, map=float(aps.mean()))


@dataclass
class QualityReport:
    q_x: float
    q_y: float
    q_a: float
    affinity_error_ratio: float

    def __post_init__(self):
        for name in ("q_x", "q_y", "q_a", "affinity_error_ratio"):
            if not np.isfinite(getattr(self, name)):
                raise ParameterError(f"{name} must be finite")
        for name in ("q_a", "affinity_error_ratio"):
            if not 0 <= getattr(self, name) <= 1:
                raise ParameterError(f"{name} must lie in [0, 1]")

    def to_json(self) -> dict:
        return {
            "q_x": float(self.q_x),
            "q_y": float(self.q_y),
            "q_a": float(self.q_a),
            "affinity_error_ratio": float(self.affinity_error_ratio),
        }

    @classmethod
    def from_json(cls, d: dict) -> "QualityReport":
        return cls(**{k: float(d[k]) for k in ("q_x", "q_y", "q_a", "affinity_error_ratio")})

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "QualityReport":
        return cls.from_json(json.loads(Path(path).read_text()))

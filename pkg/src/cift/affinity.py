"""Temperature-scaled similarity, top-k neighbor filtering and row-stochastic affinities.

All functions run in float64 torch so the same code serves both plain evaluation
and the differentiable training path.  Numpy arrays are accepted everywhere and
converted on entry; gradients flow through torch inputs untouched.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from .errors import DegenerateInputError, ParameterError
from .probes import note_kinks

Tensor = torch.Tensor


def _as_t(x) -> Tensor:
    if isinstance(x, Tensor):
        return x if x.dtype == torch.float64 else x.to(torch.float64)
    return torch.as_tensor(np.asarray(x), dtype=torch.float64)


def cosine_similarity(U, W) -> Tensor:
    """Pairwise cosine similarity, (n, d) x (m, d) -> (n, m)."""
    U, W = _as_t(U), _as_t(W)
    if U.ndim != 2 or W.ndim != 2 or U.shape[1] != W.shape[1]:
        raise ParameterError(f"incompatible shapes {tuple(U.shape)} and {tuple(W.shape)}")
    un = torch.linalg.norm(U, dim=1)
    wn = torch.linalg.norm(W, dim=1)
    if bool((un == 0).any()) or bool((wn == 0).any()):
        raise DegenerateInputError("cosine similarity undefined for zero-norm rows")
    return (U @ W.T) / (un[:, None] * wn[None, :])


def temperature_exp(S_cos, tau: float) -> Tensor:
    """Elementwise exp(S / tau); smaller tau sharpens the similarity distribution."""
    if not tau > 0:
        raise ParameterError(f"temperature must be > 0, got {tau}")
    return torch.exp(_as_t(S_cos) / tau)


def topk_filter(S, k: int) -> Tensor:
    """Keep the k largest entries per row, zero the rest.

    Ties resolve to the lowest column index so the output is reproducible
    across platforms.
    """
    S = _as_t(S)
    n, m = S.shape
    if not 1 <= k <= m:
        raise ParameterError(f"k must be in [1, {m}], got {k}")
    if k == m:
        note_kinks(np.ones((n, m), dtype=bool))
        return S
    with torch.no_grad():
        order = torch.argsort(S, dim=1, descending=True, stable=True)
        mask = torch.zeros((n, m), dtype=torch.float64)
        mask.scatter_(1, order[:, :k], 1.0)
    note_kinks(mask.numpy() > 0)
    return S * mask


def row_normalize(Sp) -> Tensor:
    """Divide every row by its sum, producing a row-stochastic matrix."""
    Sp = _as_t(Sp)
    sums = Sp.sum(dim=1, keepdim=True)
    if bool((sums <= 0).any()):
        raise DegenerateInputError("row normalization requires positive row sums")
    return Sp / sums


def affinity_matrix(U, W, tau: float, k: int) -> Tensor:
    """cosine -> temperature exp -> top-k -> row normalization, in one call."""
    return row_normalize(topk_filter(temperature_exp(cosine_similarity(U, W), tau), k))


def gft_affinity(X, v: Callable[[Tensor], Tensor], tau: float, k: int) -> Tensor:
    """Whole-batch square affinity over enhanced features v(X), diagonal included."""
    V = v(_as_t(X))
    return affinity_matrix(V, V, tau, k)


def dump_affinity_csv(A, path: str | Path) -> None:
    """Row-major CSV with a c0..c{m-1} header, full float64 precision."""
    A = np.asarray(A if not isinstance(A, Tensor) else A.detach().numpy(), dtype=np.float64)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"c{j}" for j in range(A.shape[1])])
        for row in A:
            writer.writerow([f"{x:.17g}" for x in row])


def load_affinity_csv(path: str | Path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or not rows[0] or not rows[0][0].startswith("c"):
        raise ParameterError(f"{path}: expected a c0..cN header row")
    data = [[float(x) for x in row] for row in rows[1:]]
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != len(rows[0]):
        raise ParameterError(f"{path}: ragged or empty matrix")
    return arr


def load_labels_csv(path: str | Path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["label"]:
        raise ParameterError(f"{path}: expected a single 'label' header column")
    return np.asarray([int(row[0]) for row in rows[1:]], dtype=np.int64)


def dump_labels_csv(labels, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label"])
        for lab in np.asarray(labels, dtype=np.int64):
            writer.writerow([int(lab)])

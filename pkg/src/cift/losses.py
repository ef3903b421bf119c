"""Classification and metric-learning losses plus the five-term total.

The metric term is the heterogeneous-center contrastive (HCC) loss: pull each
anchor to its pooled-modality class center, hinge-push it away from every
other class center.  It runs on features with Euclidean distance (margin
rho_eu) and on logits with a KL divergence between softmaxed rows (margin
rho_kl).  The total is the plain unweighted sum of the five terms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
import torch

from .affinity import Tensor, _as_t
from .errors import DegenerateInputError, NumericalError, ParameterError
from .probes import note_kinks


class HccDistance(Enum):
    EUCLIDEAN = "euclidean"
    KL = "kl"


@dataclass(frozen=True)
class LossWeightsConfig:
    """Hinge margins of the two HCC variants."""

    rho_eu: float = 0.6
    rho_kl: float = 6.0

    def __post_init__(self):
        if not (self.rho_eu > 0 and self.rho_kl > 0):
            raise ParameterError("HCC margins must be > 0")


@dataclass(frozen=True)
class LossBreakdown:
    ce_backbone: float
    me_backbone: float
    ce_graph: float
    me_graph: float
    tie: float
    total: float

    def __post_init__(self):
        parts = self.ce_backbone + self.me_backbone + self.ce_graph + self.me_graph + self.tie
        if self.total != parts:
            raise ParameterError(f"total {self.total} != sum of terms {parts}")


LOSS_CSV_HEADER = "step,ce_backbone,me_backbone,ce_graph,me_graph,tie,total"


def format_loss_row(step: int, bd: LossBreakdown) -> str:
    vals = (bd.ce_backbone, bd.me_backbone, bd.ce_graph, bd.me_graph, bd.tie, bd.total)
    return ",".join([str(step)] + [repr(float(v)) for v in vals])


def _check_labels(labels, n_classes_hint: int | None = None) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise ParameterError(f"labels must be a 1-D vector, got shape {labels.shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        raise ParameterError(f"labels must be integers, got dtype {labels.dtype}")
    if n_classes_hint is not None and (labels.min() < 0 or labels.max() >= n_classes_hint):
        raise ParameterError(
            f"labels must lie in [0, {n_classes_hint}), got range "
            f"[{labels.min()}, {labels.max()}]"
        )
    return labels.astype(np.int64)


def cross_entropy(Y, labels) -> Tensor:
    """Mean over rows of -log softmax(Y)[label]."""
    Y = _as_t(Y)
    if Y.ndim != 2:
        raise ParameterError(f"expected (n, C) logits, got shape {tuple(Y.shape)}")
    labels = _check_labels(labels, n_classes_hint=Y.shape[1])
    if len(labels) != Y.shape[0]:
        raise ParameterError(f"{Y.shape[0]} rows but {len(labels)} labels")
    logp = torch.log_softmax(Y, dim=1)
    idx = torch.as_tensor(labels)
    return -logp[torch.arange(len(labels)), idx].mean()


def hetero_centers(F, labels) -> dict[int, Tensor]:
    """Per-identity mean over all its rows, both modalities pooled."""
    F = _as_t(F)
    labels = _check_labels(labels)
    if len(labels) != F.shape[0]:
        raise ParameterError(f"{F.shape[0]} rows but {len(labels)} labels")
    if F.shape[0] == 0:
        raise DegenerateInputError("cannot compute centers of an empty batch")
    return {int(c): F[labels == c].mean(dim=0) for c in np.unique(labels)}


def _own_centers(F: Tensor, labels: np.ndarray, include_anchor: bool) -> Tensor:
    """Per-anchor own-class center, optionally excluding the anchor itself."""
    classes, counts = np.unique(labels, return_counts=True)
    sums = {int(c): F[labels == c].sum(dim=0) for c in classes}
    count_of = dict(zip(classes.tolist(), counts.tolist()))
    rows = []
    for i, y in enumerate(labels):
        n_c = count_of[int(y)]
        if include_anchor:
            rows.append(sums[int(y)] / n_c)
        else:
            if n_c < 2:
                raise DegenerateInputError(
                    f"class {y} has a single sample; anchor exclusion impossible"
                )
            rows.append((sums[int(y)] - F[i]) / (n_c - 1))
    return torch.stack(rows)


def _euclidean_to_centers(F: Tensor, C: Tensor) -> Tensor:
    """(n, m) matrix of ||F_i - C_j||_2."""
    diff = F.unsqueeze(1) - C.unsqueeze(0)
    return torch.sqrt((diff**2).sum(dim=2))


def _kl_to_centers(I: Tensor, C: Tensor) -> Tensor:
    """(n, m) matrix of KL(softmax(I_i) || softmax(C_j)), centers as raw logits."""
    logp = torch.log_softmax(I, dim=1)
    p = torch.exp(logp)
    logq = torch.log_softmax(C, dim=1)
    entropy = (p * logp).sum(dim=1)
    return entropy.unsqueeze(1) - p @ logq.T


def hcc_loss(
    I,
    labels,
    distance: HccDistance,
    rho: float,
    include_anchor: bool = True,
) -> Tensor:
    """Heterogeneous-center contrastive loss.

    Per anchor: distance to its own-class center plus the mean hinge
    max(rho - D(anchor, other center), 0) over all other-class centers,
    averaged over anchors.
    """
    I = _as_t(I)
    if I.ndim != 2:
        raise ParameterError(f"expected (n, d) input, got shape {tuple(I.shape)}")
    labels = _check_labels(labels)
    if len(labels) != I.shape[0]:
        raise ParameterError(f"{I.shape[0]} rows but {len(labels)} labels")
    if not rho > 0:
        raise ParameterError(f"margin rho must be > 0, got {rho}")
    distance = HccDistance(distance)
    classes = np.unique(labels)
    if len(classes) < 2:
        raise DegenerateInputError("HCC loss needs >= 2 distinct identities in the batch")

    centers = torch.stack([I[labels == c].mean(dim=0) for c in classes])
    own = _own_centers(I, labels, include_anchor)
    if distance is HccDistance.EUCLIDEAN:
        D_neg = _euclidean_to_centers(I, centers)
        D_pos = torch.sqrt(((I - own) ** 2).sum(dim=1))
    else:
        D_neg = _kl_to_centers(I, centers)
        D_pos = _kl_pairwise_diag(I, own)

    col_of = {int(c): j for j, c in enumerate(classes)}
    neg_mask = np.ones((len(labels), len(classes)), dtype=bool)
    for i, y in enumerate(labels):
        neg_mask[i, col_of[int(y)]] = False
    neg_mask_t = torch.as_tensor(neg_mask)

    margins = rho - D_neg
    note_kinks((margins.detach().numpy() > 0) & neg_mask)
    hinge = torch.clamp(margins, min=0.0)
    neg_term = (hinge * neg_mask_t).sum(dim=1) / neg_mask_t.sum(dim=1)
    return (D_pos + neg_term).mean()


def _kl_pairwise_diag(I: Tensor, own: Tensor) -> Tensor:
    """Row-wise KL(softmax(I_i) || softmax(own_i))."""
    logp = torch.log_softmax(I, dim=1)
    p = torch.exp(logp)
    logq = torch.log_softmax(own, dim=1)
    return (p * (logp - logq)).sum(dim=1)


def _as_float(name: str, v) -> float:
    x = float(v.detach()) if isinstance(v, Tensor) else float(v)
    if not math.isfinite(x):
        raise NumericalError(f"loss term '{name}' is non-finite: {x}")
    return x


def total_loss(ce_backbone, me_backbone, ce_graph, me_graph, tie) -> LossBreakdown:
    """Assemble the plain unweighted five-term sum, verifying finiteness."""
    parts = {
        "ce_backbone": _as_float("ce_backbone", ce_backbone),
        "me_backbone": _as_float("me_backbone", me_backbone),
        "ce_graph": _as_float("ce_graph", ce_graph),
        "me_graph": _as_float("me_graph", me_graph),
        "tie": _as_float("tie", tie),
    }
    total = _as_float("total", sum(parts.values()))
    return LossBreakdown(total=total, **parts)

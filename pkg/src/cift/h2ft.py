"""Homogeneous/heterogeneous feature transfer and the shared feature enhancement.

A balanced training batch is split into 2N unbalanced groups (one query against
the N opposite-modality samples).  Each group runs two graph passes: the query
attends to itself plus the gallery (heterogeneous), while gallery samples only
attend to each other (homogeneous), so the query never leaks into the gallery
messages.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .affinity import Tensor, _as_t, affinity_matrix
from .datagen import Modality, Sample, TrainingBatch
from .errors import DegenerateInputError, ParameterError

VAR_FLOOR = 1e-5


@dataclass
class EnhanceParams:
    """Per-feature standardization with a learnable affine map (BNNeck style)."""

    gamma: Tensor
    beta: Tensor
    running_mean: Tensor
    running_var: Tensor
    momentum: float = 0.1

    def __post_init__(self):
        if not 0 < self.momentum < 1:
            raise ParameterError(f"momentum must be in (0, 1), got {self.momentum}")
        if bool((self.running_var <= 0).any()):
            raise ParameterError("running_var entries must be > 0")
        for name in ("gamma", "beta"):
            if not bool(torch.isfinite(getattr(self, name)).all()):
                raise ParameterError(f"{name} contains non-finite entries")

    @classmethod
    def create(cls, dim: int, momentum: float = 0.1, requires_grad: bool = True) -> "EnhanceParams":
        return cls(
            gamma=torch.ones(dim, dtype=torch.float64, requires_grad=requires_grad),
            beta=torch.zeros(dim, dtype=torch.float64, requires_grad=requires_grad),
            running_mean=torch.zeros(dim, dtype=torch.float64),
            running_var=torch.ones(dim, dtype=torch.float64),
            momentum=momentum,
        )


def column_stats(X) -> tuple[Tensor, Tensor]:
    """Per-column mean and population variance."""
    X = _as_t(X)
    mean = X.mean(dim=0)
    var = ((X - mean) ** 2).mean(dim=0)
    return mean, var


def enhance(
    X,
    p: EnhanceParams,
    training: bool = False,
    stats: tuple[Tensor, Tensor] | None = None,
) -> Tensor:
    """Standardize columns then apply the learnable affine map.

    training=True uses the batch's own statistics and folds them into the
    running averages; otherwise the running statistics apply.  An explicit
    `stats` pair overrides both modes without touching the running state,
    which lets a training step reuse one fixed standardization map for every
    group and for the counterfactual pass.
    """
    X = _as_t(X)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ParameterError(f"expected a nonempty (n, d) matrix, got shape {tuple(X.shape)}")
    if stats is None:
        if training:
            if X.shape[0] < 2:
                raise DegenerateInputError("training-mode enhancement needs >= 2 rows")
            stats = column_stats(X)
            with torch.no_grad():
                m = p.momentum
                p.running_mean.mul_(1 - m).add_(m * stats[0].detach())
                p.running_var.mul_(1 - m).add_(m * stats[1].detach())
        else:
            stats = (p.running_mean, p.running_var)
    mean, var = stats
    std = torch.sqrt(torch.clamp(var, min=VAR_FLOOR))
    return (X - mean) / std * p.gamma + p.beta


@dataclass
class QueryGroup:
    """One query sample against the full opposite-modality half of a batch."""

    query: Sample
    gallery: np.ndarray
    gallery_labels: np.ndarray
    query_index: int
    gallery_indices: np.ndarray

    def __post_init__(self):
        if len(self.gallery) < 1:
            raise ParameterError("gallery must hold at least one sample")

    @property
    def labels(self) -> np.ndarray:
        """Identity labels of the stacked group: query first, then gallery."""
        return np.concatenate([[self.query.identity], self.gallery_labels])


def build_groups(batch: TrainingBatch) -> list[QueryGroup]:
    """2N groups: every sample queries the entire opposite-modality half."""
    feats, labels, vis_mask = batch.arrays()
    idx = {Modality.VIS: np.flatnonzero(vis_mask), Modality.IR: np.flatnonzero(~vis_mask)}
    groups = []
    for i, sample in enumerate(batch.samples):
        gal = idx[sample.modality.other]
        groups.append(
            QueryGroup(
                query=sample,
                gallery=feats[gal],
                gallery_labels=labels[gal],
                query_index=i,
                gallery_indices=gal,
            )
        )
    return groups


def het_transfer_core(
    vq: Tensor, V_G: Tensor, tau_het: float, k: int, V_msg: Tensor | None = None
) -> tuple[Tensor, Tensor]:
    """Heterogeneous pass on already-enhanced features.

    The query row attends to the (N+1)-stack [query; gallery], self term
    included, and its transferred feature is the affinity-weighted mix.
    `V_msg` optionally substitutes the features being mixed while the affinity
    still comes from (vq, V_G) — the counterfactual pass replaces the topology
    but keeps the original messages.
    """
    V = torch.cat([vq.reshape(1, -1), V_G], dim=0)
    a_het = affinity_matrix(vq.reshape(1, -1), V, tau_het, k)
    M = V if V_msg is None else _as_t(V_msg)
    f_q = (a_het @ M)[0]
    return f_q, a_het


def hom_transfer_core(
    V_G: Tensor, tau_hom: float, k: int, V_msg: Tensor | None = None
) -> tuple[Tensor, Tensor]:
    """Homogeneous pass on already-enhanced gallery features (query excluded)."""
    A_hom = affinity_matrix(V_G, V_G, tau_hom, k)
    M = V_G if V_msg is None else _as_t(V_msg)
    return A_hom @ M, A_hom


def het_transfer(q, X_G, p: EnhanceParams, tau_het: float, k: int) -> tuple[Tensor, Tensor]:
    """Enhance with running statistics, then run the heterogeneous pass."""
    V = enhance(torch.cat([_as_t(q).reshape(1, -1), _as_t(X_G)], dim=0), p)
    f_q, a_het = het_transfer_core(V[0], V[1:], tau_het, k)
    return f_q, a_het


def hom_transfer(X_G, p: EnhanceParams, tau_hom: float, k: int) -> tuple[Tensor, Tensor]:
    """Enhance with running statistics, then run the homogeneous pass."""
    V_G = enhance(X_G, p)
    return hom_transfer_core(V_G, tau_hom, k)


def gft_transfer_core(
    V: Tensor, tau: float, k: int, V_msg: Tensor | None = None
) -> tuple[Tensor, Tensor]:
    """Single whole-stack graph baseline: every row attends to every row."""
    A = affinity_matrix(V, V, tau, k)
    M = V if V_msg is None else _as_t(V_msg)
    return A @ M, A


def gft_transfer(batch: TrainingBatch, p: EnhanceParams, tau: float, k: int) -> tuple[Tensor, Tensor]:
    """Whole-batch baseline transfer over running-stat enhanced features."""
    feats, _, _ = batch.arrays()
    V = enhance(feats, p)
    return gft_transfer_core(V, tau, k)

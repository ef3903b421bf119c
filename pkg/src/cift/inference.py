"""Unbalanced-scenario inference and evaluation.

Each query faces the full opposite-modality gallery, mirroring the 1:N
distribution the group training simulates.  The transfer used for retrieval
follows the trained configuration: no transfer for a backbone-only model, a
joint query+gallery graph for the plain-GFT model, and the heterogeneous /
homogeneous split for the full model.  Retrieval distances are Euclidean on
the transferred features.
"""

from __future__ import annotations

import numpy as np
import torch

from .affinity import affinity_matrix
from .datagen import InferenceScenario
from .h2ft import enhance, gft_transfer_core, het_transfer_core, hom_transfer_core
from .metrics import (
    QualityReport,
    RetrievalResult,
    affinity_error_ratio,
    affinity_quality,
    cmc_map,
    margin_quality,
    pairwise_distances,
)
from .model import Model

ERROR_RATIO_TOP = 4


def enhanced_features(model: Model, X) -> torch.Tensor:
    """Backbone projection plus running-statistics enhancement (inference mode)."""
    return enhance(model.backbone(X), model.enhance)


def query_gallery_affinity(model: Model, scenario: InferenceScenario, tau_het: float, k: int) -> np.ndarray:
    """Per-query affinity over gallery columns only (the diagnostic matrix the
    topology metrics read; the self column of the transfer pass is omitted)."""
    with torch.no_grad():
        Q, _ = scenario.query_arrays()
        G, _ = scenario.gallery_arrays()
        Vq = enhanced_features(model, Q)
        Vg = enhanced_features(model, G)
        return affinity_matrix(Vq, Vg, tau_het, k).numpy()


def evaluate(model: Model, scenario: InferenceScenario, config) -> tuple[RetrievalResult, QualityReport]:
    """CMC/mAP plus the feature/topology quality report for one scenario.

    `config` supplies ablation flags, temperatures and k (duck-typed; any
    object with those attributes works).
    """
    with torch.no_grad():
        Q, q_labels = scenario.query_arrays()
        G, g_labels = scenario.gallery_arrays()
        Vq = enhanced_features(model, Q)
        Vg = enhanced_features(model, G)

        if not config.ablation.gft:
            Fq, Fg = Vq, Vg
            dist = pairwise_distances(Fq.numpy(), Fg.numpy())
        elif config.ablation.h2g:
            Fg, _ = hom_transfer_core(Vg, config.tau_hom, config.k)
            Fq = torch.stack(
                [het_transfer_core(vq, Vg, config.tau_het, config.k)[0] for vq in Vq]
            )
            dist = pairwise_distances(Fq.numpy(), Fg.numpy())
        else:
            rows, fqs = [], []
            for i in range(len(Vq)):
                F, _ = gft_transfer_core(torch.cat([Vq[i : i + 1], Vg]), config.tau_hom, config.k)
                fqs.append(F[0])
                rows.append(pairwise_distances(F[0:1].numpy(), F[1:].numpy())[0])
            Fq = torch.stack(fqs)
            Fg, _ = gft_transfer_core(Vg, config.tau_hom, config.k)
            dist = np.stack(rows)

        retrieval = cmc_map(dist, q_labels, g_labels)

        A_qg = affinity_matrix(Vq, Vg, config.tau_het, config.k).numpy()
        labels_all = np.concatenate([q_labels, g_labels])
        quality = QualityReport(
            q_x=margin_quality(np.concatenate([Vq.numpy(), Vg.numpy()]), labels_all),
            q_y=margin_quality(np.concatenate([Fq.numpy(), Fg.numpy()]), labels_all),
            q_a=affinity_quality(A_qg, q_labels, col_labels=g_labels),
            affinity_error_ratio=affinity_error_ratio(
                A_qg, q_labels, top=min(ERROR_RATIO_TOP, A_qg.shape[1]), col_labels=g_labels
            ),
        )
        return retrieval, quality

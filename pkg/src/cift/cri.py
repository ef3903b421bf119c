"""Counterfactual Relation Intervention (CRI).

The causal effect of the graph topology is isolated by replacing the inputs of
the affinity computation with Gaussian samples X* = X_sigma ⊙ Z + X_mu
(reparameterized, so the intervention distribution is learned) while message
passing keeps the original features.  The Total Indirect Effect is the factual
output minus the expectation of the intervened output, and its cross-entropy
forces the topology itself to carry discriminative information.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .affinity import Tensor, _as_t
from .errors import ParameterError
from .h2ft import EnhanceParams, QueryGroup, enhance, het_transfer_core, hom_transfer_core
from .losses import cross_entropy


@dataclass
class InterventionParams:
    """Learned Gaussian intervention; the std is stored as log-std so it stays positive."""

    X_mu: Tensor
    X_log_sigma: Tensor
    num_mc_samples: int = 1

    def __post_init__(self):
        if self.num_mc_samples < 1:
            raise ParameterError(f"num_mc_samples must be >= 1, got {self.num_mc_samples}")
        if self.X_mu.shape != self.X_log_sigma.shape or self.X_mu.ndim != 1:
            raise ParameterError("X_mu and X_log_sigma must be equal-length vectors")
        for name in ("X_mu", "X_log_sigma"):
            if not bool(torch.isfinite(getattr(self, name)).all()):
                raise ParameterError(f"{name} contains non-finite entries")

    @property
    def X_sigma(self) -> Tensor:
        return torch.exp(self.X_log_sigma)

    @property
    def dim(self) -> int:
        return self.X_mu.shape[0]

    @classmethod
    def create(cls, dim: int, num_mc_samples: int = 1, requires_grad: bool = True) -> "InterventionParams":
        """Standard-normal intervention: mu = 0, sigma = 1."""
        return cls(
            X_mu=torch.zeros(dim, dtype=torch.float64, requires_grad=requires_grad),
            X_log_sigma=torch.zeros(dim, dtype=torch.float64, requires_grad=requires_grad),
            num_mc_samples=num_mc_samples,
        )

    @classmethod
    def from_sigma(cls, X_mu, X_sigma, num_mc_samples: int = 1) -> "InterventionParams":
        sigma = _as_t(X_sigma)
        if bool((sigma <= 0).any()):
            raise ParameterError("X_sigma entries must be > 0")
        return cls(_as_t(X_mu), torch.log(sigma), num_mc_samples)


def intervene_with(p: InterventionParams, Z) -> Tensor:
    """X* = X_sigma ⊙ Z + X_mu for an externally supplied standard-normal Z."""
    Z = _as_t(Z)
    if Z.ndim != 2 or Z.shape[1] != p.dim:
        raise ParameterError(f"Z must be (n, {p.dim}), got {tuple(Z.shape)}")
    return p.X_sigma * Z + p.X_mu


def sample_intervened(p: InterventionParams, shape: tuple[int, int], rng: np.random.Generator) -> Tensor:
    """Draw X*[i] = X_sigma ⊙ Z_i + X_mu, differentiable in (X_mu, X_sigma)."""
    n, d = shape
    if d != p.dim:
        raise ParameterError(f"shape asks for dim {d} but intervention has dim {p.dim}")
    return intervene_with(p, rng.standard_normal((n, d)))


@dataclass
class GroupPipeline:
    """Forward machinery shared by the factual and counterfactual group passes.

    `stats` optionally pins the standardization statistics of the enhancement
    (the trainer passes the current batch statistics); when absent the running
    statistics apply.  `backbone_weight` is optional so the pipeline also works
    on inputs that are already backbone features.
    """

    enhance: EnhanceParams
    classifier_weight: Tensor
    classifier_bias: Tensor
    tau_hom: float
    tau_het: float
    k: int
    backbone_weight: Tensor | None = None
    backbone_bias: Tensor | None = None
    stats: tuple[Tensor, Tensor] | None = None

    def features(self, X) -> Tensor:
        X = _as_t(X)
        if self.backbone_weight is None:
            return X
        return X @ self.backbone_weight + self.backbone_bias

    def enhanced(self, X) -> Tensor:
        return enhance(self.features(X), self.enhance, stats=self.stats)

    def classify(self, F) -> Tensor:
        return _as_t(F) @ self.classifier_weight + self.classifier_bias


def group_stack(group: QueryGroup) -> np.ndarray:
    """Raw (N+1, d) stack of the group, query row first."""
    return np.concatenate([group.query.feature.reshape(1, -1), group.gallery], axis=0)


def factual_output(group: QueryGroup, params: GroupPipeline) -> Tensor:
    """Y_{X,A_X}: the ordinary H²FT pass of the group followed by classification."""
    V = params.enhanced(group_stack(group))
    f_q, _ = het_transfer_core(V[0], V[1:], params.tau_het, params.k)
    F_G, _ = hom_transfer_core(V[1:], params.tau_hom, params.k)
    return params.classify(torch.cat([f_q.reshape(1, -1), F_G], dim=0))


def intervened_output(group: QueryGroup, params: GroupPipeline, X_star) -> Tensor:
    """One counterfactual pass: affinities from X*, messages over the original v(X).

    X_star lives at backbone-feature level (the point where the affinity
    pipeline starts), so it goes through enhancement but not the backbone.
    """
    V = params.enhanced(group_stack(group))
    V_star = enhance(_as_t(X_star), params.enhance, stats=params.stats)
    if V_star.shape != V.shape:
        raise ParameterError(
            f"intervention shape {tuple(V_star.shape)} != group shape {tuple(V.shape)}"
        )
    f_q, _ = het_transfer_core(V_star[0], V_star[1:], params.tau_het, params.k, V_msg=V)
    F_G, _ = hom_transfer_core(V_star[1:], params.tau_hom, params.k, V_msg=V[1:])
    return params.classify(torch.cat([f_q.reshape(1, -1), F_G], dim=0))


def counterfactual_output(
    group: QueryGroup,
    params: GroupPipeline,
    ip: InterventionParams,
    rng: np.random.Generator,
) -> Tensor:
    """E_{X*}[Y_{X,A_{X*}}] estimated over num_mc_samples draws."""
    H = params.features(group_stack(group))
    acc = None
    for _ in range(ip.num_mc_samples):
        Y = intervened_output(group, params, sample_intervened(ip, tuple(H.shape), rng))
        acc = Y if acc is None else acc + Y
    return acc / ip.num_mc_samples


def tie(Y_fact, Y_cf_mean) -> Tensor:
    """Total Indirect Effect: elementwise Y_factual - Y_counterfactual_mean."""
    Y_fact, Y_cf_mean = _as_t(Y_fact), _as_t(Y_cf_mean)
    if Y_fact.shape != Y_cf_mean.shape:
        raise ParameterError(
            f"logit shapes differ: {tuple(Y_fact.shape)} vs {tuple(Y_cf_mean.shape)}"
        )
    return Y_fact - Y_cf_mean


@dataclass
class TieOutput:
    Y_factual: Tensor
    Y_counterfactual_mean: Tensor
    Y_tie: Tensor

    def __post_init__(self):
        expected = self.Y_factual.detach() - self.Y_counterfactual_mean.detach()
        if not torch.equal(self.Y_tie.detach(), expected):
            raise ParameterError("Y_tie must equal Y_factual - Y_counterfactual_mean")

    @classmethod
    def of(cls, Y_fact, Y_cf_mean) -> "TieOutput":
        Y_fact, Y_cf_mean = _as_t(Y_fact), _as_t(Y_cf_mean)
        return cls(Y_fact, Y_cf_mean, tie(Y_fact, Y_cf_mean))


def tie_loss(Y_tie, labels) -> Tensor:
    """L_tie: softmax cross-entropy of the TIE logits against identity labels."""
    return cross_entropy(Y_tie, labels)

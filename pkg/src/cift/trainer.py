"""Desk-scale end-to-end training: five-term loss, SGD with warmup and step
decay, finite-difference gradient verification, and the ablation switches.

A training step enhances the whole batch with its own statistics once, so
every group (and the counterfactual pass) shares a single standardization
map; the running statistics fold the batch in afterwards.  All randomness
comes from numpy generators threaded through explicitly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import inference
from .cri import intervene_with, tie_loss
from .datagen import Dataset, Modality, TrainingBatch, make_inference_scenario, sample_training_batch
from .errors import ParameterError
from .h2ft import (
    build_groups,
    column_stats,
    enhance,
    gft_transfer_core,
    het_transfer_core,
    hom_transfer_core,
)
from .losses import (
    LOSS_CSV_HEADER,
    HccDistance,
    LossBreakdown,
    cross_entropy,
    format_loss_row,
    hcc_loss,
    total_loss,
)
from .metrics import QualityReport, RetrievalResult
from .model import Model
from .probes import kinks_equal, record_kinks


@dataclass(frozen=True)
class AblationFlags:
    """Cumulative module switches: UBS needs the graph transfer, the two-graph
    split needs the group structure, and so does the intervention."""

    gft: bool = True
    ubs: bool = True
    h2g: bool = True
    cri: bool = True

    def __post_init__(self):
        if self.ubs and not self.gft:
            raise ParameterError("ubs requires gft")
        if self.h2g and not self.ubs:
            raise ParameterError("h2g requires ubs")
        if self.cri and not self.ubs:
            raise ParameterError("cri requires ubs")

    def to_dict(self) -> dict:
        return {"gft": self.gft, "ubs": self.ubs, "h2g": self.h2g, "cri": self.cri}

    @classmethod
    def from_dict(cls, d: dict) -> "AblationFlags":
        unknown = set(d) - {"gft", "ubs", "h2g", "cri"}
        if unknown:
            raise ParameterError(f"unknown ablation flags: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def none(cls) -> "AblationFlags":
        return cls(gft=False, ubs=False, h2g=False, cri=False)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 12
    steps_per_epoch: int = 10
    lr_base: float = 0.05
    warmup_epochs: int = 1
    decay_epochs: tuple[int, ...] = (6, 10)
    decay_factor: float = 0.1
    k: int = 4
    tau_hom: float = 0.4
    tau_het: float = 0.2
    ablation: AblationFlags = field(default_factory=AblationFlags)
    seed: int = 0
    mc_samples: int = 1
    batch_p: int = 4
    batch_k: int = 2
    feat_dim: int = 8
    momentum: float = 0.0
    weight_decay: float = 0.0
    bn_momentum: float = 0.1
    rho_eu: float = 0.6
    rho_kl: float = 6.0
    eval_shots: int = 1

    def __post_init__(self):
        if self.epochs < 1 or self.steps_per_epoch < 1:
            raise ParameterError("epochs and steps_per_epoch must be >= 1")
        if not self.lr_base > 0:
            raise ParameterError("lr_base must be > 0")
        if not 0 < self.decay_factor < 1:
            raise ParameterError("decay_factor must lie in (0, 1)")
        de = tuple(self.decay_epochs)
        if list(de) != sorted(set(de)):
            raise ParameterError("decay_epochs must be strictly increasing")
        object.__setattr__(self, "decay_epochs", de)
        if self.warmup_epochs < 0:
            raise ParameterError("warmup_epochs must be >= 0")
        if self.k < 1:
            raise ParameterError("k must be >= 1")
        if not (self.tau_hom > 0 and self.tau_het > 0):
            raise ParameterError("temperatures must be > 0")
        if self.mc_samples < 1:
            raise ParameterError("mc_samples must be >= 1")
        if self.batch_p < 2 or self.batch_k < 1:
            raise ParameterError("need batch_p >= 2 identities and batch_k >= 1")
        if self.feat_dim < 2:
            raise ParameterError("feat_dim must be >= 2")
        if not 0 <= self.momentum < 1:
            raise ParameterError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ParameterError("weight_decay must be >= 0")
        if not (self.rho_eu > 0 and self.rho_kl > 0):
            raise ParameterError("HCC margins must be > 0")
        if self.eval_shots < 1:
            raise ParameterError("eval_shots must be >= 1")

    def to_dict(self) -> dict:
        d = {
            k: v for k, v in self.__dict__.items() if k not in ("ablation", "decay_epochs")
        }
        d["ablation"] = self.ablation.to_dict()
        d["decay_epochs"] = list(self.decay_epochs)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ParameterError(f"unknown config keys: {sorted(unknown)}")
        if "ablation" in d:
            d["ablation"] = AblationFlags.from_dict(d["ablation"])
        if "decay_epochs" in d:
            d["decay_epochs"] = tuple(d["decay_epochs"])
        return cls(**d)


def lr_schedule(step: int, config: TrainConfig) -> float:
    """Linear ramp to lr_base across the warmup epochs, then a multiplicative
    drop by decay_factor at each decay epoch."""
    if step < 0:
        raise ParameterError("step must be >= 0")
    warmup_steps = config.warmup_epochs * config.steps_per_epoch
    if step < warmup_steps:
        return config.lr_base * step / warmup_steps
    epoch = step // config.steps_per_epoch
    passed = sum(1 for e in config.decay_epochs if epoch >= e)
    return config.lr_base * config.decay_factor**passed


def draw_intervention_noise(
    batch: TrainingBatch, config: TrainConfig, rng: np.random.Generator
) -> list[list[np.ndarray]]:
    """Standard-normal draws, one (N+1, d) matrix per group per MC sample."""
    size = batch.n_per_modality + 1
    return [
        [rng.standard_normal((size, config.feat_dim)) for _ in range(config.mc_samples)]
        for _ in range(2 * batch.n_per_modality)
    ]


def _forward(
    model: Model, batch: TrainingBatch, config: TrainConfig, draws: list[list[np.ndarray]] | None
):
    """All five loss terms as torch scalars, plus the batch statistics used for
    enhancement (returned so the caller can fold them into the running stats).

    Pure: no parameter or buffer is mutated, so the same function serves the
    training step and the finite-difference probes.
    """
    a = config.ablation
    feats, labels, _ = batch.arrays()
    H = model.backbone(feats)
    stats = column_stats(H)
    V = enhance(H, model.enhance, stats=stats)

    Y_b = model.classify(V)
    ce_backbone = cross_entropy(Y_b, labels)
    me_backbone = hcc_loss(V, labels, HccDistance.EUCLIDEAN, config.rho_eu) + hcc_loss(
        Y_b, labels, HccDistance.KL, config.rho_kl
    )

    zero = torch.zeros((), dtype=torch.float64)
    ce_graph = me_graph = tie_term = zero
    if a.gft and not a.ubs:
        F, _ = gft_transfer_core(V, config.tau_hom, config.k)
        Y_g = model.classify(F)
        ce_graph = cross_entropy(Y_g, labels)
        me_graph = hcc_loss(Y_g, labels, HccDistance.KL, config.rho_kl)
    elif a.gft:
        logits, tie_logits, group_labels = [], [], []
        for gi, g in enumerate(build_groups(batch)):
            V_grp = torch.cat([V[g.query_index : g.query_index + 1], V[g.gallery_indices]])
            if a.h2g:
                f_q, _ = het_transfer_core(V_grp[0], V_grp[1:], config.tau_het, config.k)
                F_G, _ = hom_transfer_core(V_grp[1:], config.tau_hom, config.k)
                F = torch.cat([f_q.reshape(1, -1), F_G])
            else:
                F, _ = gft_transfer_core(V_grp, config.tau_hom, config.k)
            Y_g = model.classify(F)
            logits.append(Y_g)
            group_labels.append(g.labels)
            if a.cri:
                acc = None
                for Z in draws[gi]:
                    V_star = enhance(
                        intervene_with(model.intervention, Z), model.enhance, stats=stats
                    )
                    if a.h2g:
                        f_s, _ = het_transfer_core(
                            V_star[0], V_star[1:], config.tau_het, config.k, V_msg=V_grp
                        )
                        F_s, _ = hom_transfer_core(
                            V_star[1:], config.tau_hom, config.k, V_msg=V_grp[1:]
                        )
                        F_cf = torch.cat([f_s.reshape(1, -1), F_s])
                    else:
                        F_cf, _ = gft_transfer_core(
                            V_star, config.tau_hom, config.k, V_msg=V_grp
                        )
                    Y_cf = model.classify(F_cf)
                    acc = Y_cf if acc is None else acc + Y_cf
                tie_logits.append(Y_g - acc / len(draws[gi]))
        Y_all = torch.cat(logits)
        labels_all = np.concatenate(group_labels)
        ce_graph = cross_entropy(Y_all, labels_all)
        me_graph = hcc_loss(Y_all, labels_all, HccDistance.KL, config.rho_kl)
        if a.cri:
            tie_term = tie_loss(torch.cat(tie_logits), labels_all)

    terms = {
        "ce_backbone": ce_backbone,
        "me_backbone": me_backbone,
        "ce_graph": ce_graph,
        "me_graph": me_graph,
        "tie": tie_term,
    }
    return terms, stats


def train_step(
    model: Model,
    batch: TrainingBatch,
    config: TrainConfig,
    rng: np.random.Generator,
    step: int = 0,
) -> tuple[Model, LossBreakdown]:
    """One SGD step on the five-term total.  A zero learning rate leaves the
    model (parameters and running statistics) bitwise untouched."""
    draws = draw_intervention_noise(batch, config, rng) if config.ablation.cri else None
    terms, stats = _forward(model, batch, config, draws)
    breakdown = total_loss(**terms)
    lr = lr_schedule(step, config)
    if lr == 0.0:
        return model, breakdown

    loss = sum(terms.values())
    params = model.parameters()
    for p in params.values():
        p.grad = None
    loss.backward()

    with torch.no_grad():
        m = model.enhance.momentum
        model.enhance.running_mean.mul_(1 - m).add_(m * stats[0].detach())
        model.enhance.running_var.mul_(1 - m).add_(m * stats[1].detach())
        velocity = getattr(model, "_sgd_velocity", None)
        if config.momentum > 0 and velocity is None:
            velocity = {n: torch.zeros_like(p) for n, p in params.items()}
            model._sgd_velocity = velocity
        for name, p in params.items():
            g = p.grad if p.grad is not None else torch.zeros_like(p)
            if config.weight_decay > 0:
                g = g + config.weight_decay * p
            if config.momentum > 0:
                velocity[name].mul_(config.momentum).add_(g)
                g = velocity[name]
            p.sub_(lr * g)
            p.grad = None
    return model, breakdown


@dataclass
class GradCheckReport:
    max_rel_err: float
    n_checked: int
    n_skipped_kinks: int
    per_group: dict[str, float]
    eps: float


def finite_diff_check(
    model: Model,
    batch: TrainingBatch,
    config: TrainConfig,
    eps: float = 1e-5,
    min_params: int = 200,
) -> GradCheckReport:
    """Central finite differences against the analytic gradient of the total.

    Samples at least `min_params` coordinates spread over every parameter
    group.  A coordinate whose ±eps evaluations land on different sides of a
    non-smooth decision (top-k choice or hinge activation) is skipped: the
    loss is not differentiable there and the comparison is void.
    """
    if not eps > 0:
        raise ParameterError(f"eps must be > 0, got {eps}")
    draws = draw_intervention_noise(batch, config, np.random.default_rng(config.seed)) if config.ablation.cri else None

    def forward() -> torch.Tensor:
        terms, _ = _forward(model, batch, config, draws)
        return sum(terms.values())

    params = model.parameters()
    for p in params.values():
        p.grad = None
    forward().backward()
    grads = {
        n: (p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p))
        for n, p in params.items()
    }

    sizes = {n: p.numel() for n, p in params.items()}
    total = sum(sizes.values())
    pick_rng = np.random.default_rng(config.seed)
    picks: list[tuple[str, int]] = []
    if total <= min_params:
        picks = [(n, i) for n, s in sizes.items() for i in range(s)]
    else:
        for n, s in sizes.items():
            want = min(s, math.ceil(min_params * s / total))
            idx = pick_rng.permutation(s)[:want] if want < s else np.arange(s)
            picks.extend((n, int(i)) for i in idx)

    max_rel = 0.0
    per_group = {n: 0.0 for n in params}
    skipped = 0
    for name, i in picks:
        flat = params[name].data.view(-1)
        orig = float(flat[i])
        flat[i] = orig + eps
        with record_kinks() as sig_p:
            f_p = float(forward().detach())
        flat[i] = orig - eps
        with record_kinks() as sig_m:
            f_m = float(forward().detach())
        flat[i] = orig
        if not kinks_equal(sig_p, sig_m):
            skipped += 1
            continue
        fd = (f_p - f_m) / (2 * eps)
        an = float(grads[name].view(-1)[i])
        rel = abs(fd - an) / max(abs(fd), abs(an), 1e-8)
        max_rel = max(max_rel, rel)
        per_group[name] = max(per_group[name], rel)
    for p in params.values():
        p.grad = None
    return GradCheckReport(
        max_rel_err=max_rel,
        n_checked=len(picks) - skipped,
        n_skipped_kinks=skipped,
        per_group=per_group,
        eps=eps,
    )


@dataclass
class RunResult:
    model: Model
    log: list[tuple[int, LossBreakdown]]
    quality: QualityReport
    qualities: dict[str, QualityReport]
    retrieval: dict[str, RetrievalResult]


def write_loss_csv(log: list[tuple[int, LossBreakdown]], path: str | Path) -> None:
    lines = [LOSS_CSV_HEADER] + [format_loss_row(step, bd) for step, bd in log]
    Path(path).write_text("\n".join(lines) + "\n")


def run_experiment(config: TrainConfig, dataset: Dataset, out_dir: str | Path | None = None) -> RunResult:
    """Train on per-step batches from the dataset, evaluate both unbalanced
    directions, and (optionally) write all artifacts to `out_dir`.

    quality.json carries the VIS→IR report (the primary test direction);
    both directions are returned in `qualities`.
    """
    identities = sorted({s.identity for s in dataset.samples})
    if identities != list(range(len(identities))):
        raise ParameterError("identities must be contiguous 0..I-1 for classification")

    ss = np.random.SeedSequence(config.seed)
    init_rng, batch_rng, cri_rng = (np.random.default_rng(s) for s in ss.spawn(3))
    model = Model.create(
        d_in=dataset.dim,
        d=config.feat_dim,
        num_classes=len(identities),
        rng=init_rng,
        bn_momentum=config.bn_momentum,
        mc_samples=config.mc_samples,
    )

    log = []
    for step in range(config.epochs * config.steps_per_epoch):
        batch_seed = int(batch_rng.integers(0, 2**63 - 1))
        batch = sample_training_batch(dataset, config.batch_p, config.batch_k, seed=batch_seed)
        model, breakdown = train_step(model, batch, config, cri_rng, step=step)
        log.append((step, breakdown))

    results: dict[str, tuple[RetrievalResult, QualityReport]] = {}
    for tag, modality in (("vis2ir", Modality.VIS), ("ir2vis", Modality.IR)):
        scenario = make_inference_scenario(
            dataset, modality, shots=config.eval_shots, seed=config.seed
        )
        results[tag] = inference.evaluate(model, scenario, config)

    result = RunResult(
        model=model,
        log=log,
        quality=results["vis2ir"][1],
        qualities={tag: q for tag, (_, q) in results.items()},
        retrieval={tag: r for tag, (r, _) in results.items()},
    )

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(
            json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n"
        )
        write_loss_csv(log, out / "losses.csv")
        result.quality.save(out / "quality.json")
        result.retrieval["vis2ir"].save(out / "retrieval_vis2ir.json")
        result.retrieval["ir2vis"].save(out / "retrieval_ir2vis.json")
        model.save(out / "model.bin")
    return result

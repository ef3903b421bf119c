"""The trainable model: affine backbone stand-in, feature enhancement,
identity classifier shared by the backbone and graph paths, and the learned
Gaussian intervention.

`model.bin` stores everything little-endian: an 8-byte magic, the integer
dimensions, the enhancement momentum, then each parameter group flat in
declared order (see `_ARRAY_ORDER`).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .affinity import Tensor, _as_t
from .cri import GroupPipeline, InterventionParams
from .errors import ParameterError
from .h2ft import EnhanceParams

MAGIC = b"CIFTMDL1"

_ARRAY_ORDER = (
    "backbone_weight",
    "backbone_bias",
    "gamma",
    "beta",
    "running_mean",
    "running_var",
    "classifier_weight",
    "classifier_bias",
    "X_mu",
    "X_log_sigma",
)


@dataclass
class Model:
    backbone_weight: Tensor
    backbone_bias: Tensor
    enhance: EnhanceParams
    classifier_weight: Tensor
    classifier_bias: Tensor
    intervention: InterventionParams

    def __post_init__(self):
        d_in, d = self.backbone_weight.shape
        if self.backbone_bias.shape != (d,):
            raise ParameterError("backbone bias dim mismatch")
        if self.enhance.gamma.shape != (d,):
            raise ParameterError("enhancement dim mismatch")
        if self.classifier_weight.shape[0] != d or self.classifier_bias.shape != (
            self.classifier_weight.shape[1],
        ):
            raise ParameterError("classifier dim mismatch")
        if self.intervention.dim != d:
            raise ParameterError("intervention dim mismatch")
        for name, t in self.parameters().items():
            if not bool(torch.isfinite(t).all()):
                raise ParameterError(f"parameter {name} contains non-finite entries")

    @property
    def d_in(self) -> int:
        return self.backbone_weight.shape[0]

    @property
    def d(self) -> int:
        return self.backbone_weight.shape[1]

    @property
    def num_classes(self) -> int:
        return self.classifier_weight.shape[1]

    @classmethod
    def create(
        cls,
        d_in: int,
        d: int,
        num_classes: int,
        rng: np.random.Generator,
        bn_momentum: float = 0.1,
        mc_samples: int = 1,
    ) -> "Model":
        """Gaussian fan-in init for the weights, zeros for the biases,
        standard-normal intervention."""

        def w(shape, fan_in):
            t = torch.as_tensor(rng.standard_normal(shape) / np.sqrt(fan_in))
            return t.requires_grad_(True)

        return cls(
            backbone_weight=w((d_in, d), d_in),
            backbone_bias=torch.zeros(d, dtype=torch.float64, requires_grad=True),
            enhance=EnhanceParams.create(d, momentum=bn_momentum),
            classifier_weight=w((d, num_classes), d),
            classifier_bias=torch.zeros(num_classes, dtype=torch.float64, requires_grad=True),
            intervention=InterventionParams.create(d, num_mc_samples=mc_samples),
        )

    def parameters(self) -> dict[str, Tensor]:
        """Trainable parameter groups in their declared (serialization) order."""
        return {
            "backbone_weight": self.backbone_weight,
            "backbone_bias": self.backbone_bias,
            "gamma": self.enhance.gamma,
            "beta": self.enhance.beta,
            "classifier_weight": self.classifier_weight,
            "classifier_bias": self.classifier_bias,
            "X_mu": self.intervention.X_mu,
            "X_log_sigma": self.intervention.X_log_sigma,
        }

    def _arrays(self) -> dict[str, Tensor]:
        return {
            **self.parameters(),
            "running_mean": self.enhance.running_mean,
            "running_var": self.enhance.running_var,
        }

    def backbone(self, X) -> Tensor:
        return _as_t(X) @ self.backbone_weight + self.backbone_bias

    def classify(self, F) -> Tensor:
        return _as_t(F) @ self.classifier_weight + self.classifier_bias

    def pipeline(self, tau_hom: float, tau_het: float, k: int, stats=None) -> GroupPipeline:
        """Per-group forward machinery viewing this model's parameters."""
        return GroupPipeline(
            enhance=self.enhance,
            classifier_weight=self.classifier_weight,
            classifier_bias=self.classifier_bias,
            tau_hom=tau_hom,
            tau_het=tau_het,
            k=k,
            backbone_weight=self.backbone_weight,
            backbone_bias=self.backbone_bias,
            stats=stats,
        )

    def save(self, path: str | Path) -> None:
        parts = [MAGIC]
        parts.append(
            np.array(
                [self.d_in, self.d, self.num_classes, self.intervention.num_mc_samples],
                dtype="<i8",
            ).tobytes()
        )
        parts.append(struct.pack("<d", self.enhance.momentum))
        arrays = self._arrays()
        for name in _ARRAY_ORDER:
            parts.append(arrays[name].detach().numpy().astype("<f8").tobytes(order="C"))
        Path(path).write_bytes(b"".join(parts))

    @classmethod
    def load(cls, path: str | Path) -> "Model":
        raw = Path(path).read_bytes()
        if raw[: len(MAGIC)] != MAGIC:
            raise ParameterError(f"{path}: not a model file (bad magic)")
        off = len(MAGIC)
        d_in, d, num_classes, mc = (int(x) for x in np.frombuffer(raw, "<i8", 4, off))
        off += 4 * 8
        (momentum,) = struct.unpack_from("<d", raw, off)
        off += 8
        shapes = {
            "backbone_weight": (d_in, d),
            "backbone_bias": (d,),
            "gamma": (d,),
            "beta": (d,),
            "running_mean": (d,),
            "running_var": (d,),
            "classifier_weight": (d, num_classes),
            "classifier_bias": (num_classes,),
            "X_mu": (d,),
            "X_log_sigma": (d,),
        }
        arrs = {}
        for name in _ARRAY_ORDER:
            count = int(np.prod(shapes[name]))
            arrs[name] = np.frombuffer(raw, "<f8", count, off).reshape(shapes[name]).copy()
            off += count * 8
        if off != len(raw):
            raise ParameterError(f"{path}: trailing bytes ({len(raw) - off})")

        def p(name):
            return torch.as_tensor(arrs[name]).requires_grad_(True)

        return cls(
            backbone_weight=p("backbone_weight"),
            backbone_bias=p("backbone_bias"),
            enhance=EnhanceParams(
                gamma=p("gamma"),
                beta=p("beta"),
                running_mean=torch.as_tensor(arrs["running_mean"]),
                running_var=torch.as_tensor(arrs["running_var"]),
                momentum=momentum,
            ),
            classifier_weight=p("classifier_weight"),
            classifier_bias=p("classifier_bias"),
            intervention=InterventionParams(
                X_mu=p("X_mu"),
                X_log_sigma=p("X_log_sigma"),
                num_mc_samples=mc,
            ),
        )

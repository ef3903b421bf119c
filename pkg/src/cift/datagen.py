"""Synthetic two-modality embedding datasets, training batches and inference scenarios.

The generative model is a Gaussian cluster per identity plus a per-modality
offset shared across identities: sample = center + offset + noise.  Training
batches are modality-balanced (P identities x K per modality); inference
scenarios are unbalanced (one query vs. the whole opposite-modality gallery).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import CapacityError, DegenerateInputError, ParameterError


class Modality(str, Enum):
    VIS = "VIS"
    IR = "IR"

    @property
    def other(self) -> "Modality":
        return Modality.IR if self is Modality.VIS else Modality.VIS


@dataclass(frozen=True)
class Sample:
    """One embedding vector with its identity and modality labels."""

    feature: np.ndarray
    identity: int
    modality: Modality

    def __post_init__(self):
        feat = np.asarray(self.feature, dtype=np.float64)
        if feat.ndim != 1 or feat.shape[0] < 2:
            raise ParameterError(f"feature must be a vector of dim >= 2, got shape {feat.shape}")
        if not np.all(np.isfinite(feat)):
            raise ParameterError("feature contains non-finite entries")
        if self.identity < 0:
            raise ParameterError(f"identity must be >= 0, got {self.identity}")
        object.__setattr__(self, "feature", feat)


@dataclass
class Dataset:
    samples: list[Sample]
    num_identities: int
    dim: int

    def __post_init__(self):
        for ident in range(self.num_identities):
            for mod in Modality:
                if not any(s.identity == ident and s.modality is mod for s in self.samples):
                    raise DegenerateInputError(
                        f"identity {ident} has no {mod.value} sample"
                    )

    def of(self, modality: Modality, identity: int | None = None) -> list[Sample]:
        """Samples restricted to a modality and optionally one identity."""
        return [
            s
            for s in self.samples
            if s.modality is modality and (identity is None or s.identity == identity)
        ]

    def to_json(self) -> str:
        doc = {
            "dim": self.dim,
            "identities": self.num_identities,
            "samples": [
                {"id": s.identity, "modality": s.modality.value, "feature": s.feature.tolist()}
                for s in self.samples
            ],
        }
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> "Dataset":
        doc = json.loads(text)
        samples = [
            Sample(np.asarray(rec["feature"], dtype=np.float64), int(rec["id"]), Modality(rec["modality"]))
            for rec in doc["samples"]
        ]
        return cls(samples=samples, num_identities=int(doc["identities"]), dim=int(doc["dim"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> "Dataset":
        return cls.from_json(Path(path).read_text())


def _stack(samples: list[Sample]) -> tuple[np.ndarray, np.ndarray]:
    feats = np.stack([s.feature for s in samples])
    labels = np.array([s.identity for s in samples], dtype=np.int64)
    return feats, labels


@dataclass
class TrainingBatch:
    """2N samples: the first N visible, the last N infrared, P identities x K each."""

    samples: list[Sample]
    num_identities: int = field(init=False)

    def __post_init__(self):
        vis = [s for s in self.samples if s.modality is Modality.VIS]
        ir = [s for s in self.samples if s.modality is Modality.IR]
        if len(vis) != len(ir) or not vis:
            raise ParameterError(
                f"batch must hold equally many samples per modality, got {len(vis)} VIS / {len(ir)} IR"
            )
        per_id: dict[int, list[int]] = {}
        for s in self.samples:
            per_id.setdefault(s.identity, [0, 0])[0 if s.modality is Modality.VIS else 1] += 1
        for ident, (nv, ni) in per_id.items():
            if nv != ni:
                raise ParameterError(f"identity {ident} contributes {nv} VIS but {ni} IR samples")
        self.num_identities = len(per_id)

    @property
    def n_per_modality(self) -> int:
        return len(self.samples) // 2

    def half(self, modality: Modality) -> list[int]:
        """Indices of one modality's samples, in batch order."""
        return [i for i, s in enumerate(self.samples) if s.modality is modality]

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(features (2N, d), identity labels (2N,), VIS mask (2N,))."""
        feats, labels = _stack(self.samples)
        vis_mask = np.array([s.modality is Modality.VIS for s in self.samples])
        return feats, labels, vis_mask


@dataclass
class InferenceScenario:
    """All samples of one modality as queries against a fixed opposite-modality gallery."""

    queries: list[Sample]
    gallery: list[Sample]
    shots: int

    def __post_init__(self):
        q_mods = {s.modality for s in self.queries}
        g_mods = {s.modality for s in self.gallery}
        if len(q_mods) != 1 or len(g_mods) != 1 or q_mods == g_mods:
            raise ParameterError("queries and gallery must each be single-modality and differ")

    @property
    def query_modality(self) -> Modality:
        return self.queries[0].modality

    def query_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return _stack(self.queries)

    def gallery_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return _stack(self.gallery)


def gen_synthetic_dataset(
    num_identities: int,
    per_id_per_modality: int,
    dim: int,
    center_scale: float = 1.0,
    modality_offset_scale: float = 1.0,
    noise_scale: float = 0.3,
    seed: int = 0,
) -> Dataset:
    """Draw identity centers, one shared offset per modality, and per-sample noise.

    sample = center[identity] + offset[modality] + eps, with
    center ~ N(0, center_scale^2 I), offset ~ N(0, modality_offset_scale^2 I),
    eps ~ N(0, noise_scale^2 I).  Fully determined by the seed.
    """
    if num_identities < 1 or per_id_per_modality < 1:
        raise ParameterError("counts must be >= 1")
    if dim < 2:
        raise ParameterError(f"dim must be >= 2, got {dim}")
    if min(center_scale, modality_offset_scale, noise_scale) < 0:
        raise ParameterError("scales must be >= 0")

    rng = np.random.default_rng(seed)
    centers = center_scale * rng.standard_normal((num_identities, dim))
    offsets = {
        Modality.VIS: modality_offset_scale * rng.standard_normal(dim),
        Modality.IR: modality_offset_scale * rng.standard_normal(dim),
    }
    samples = []
    for ident in range(num_identities):
        for mod in (Modality.VIS, Modality.IR):
            noise = noise_scale * rng.standard_normal((per_id_per_modality, dim))
            for j in range(per_id_per_modality):
                samples.append(Sample(centers[ident] + offsets[mod] + noise[j], ident, mod))
    return Dataset(samples=samples, num_identities=num_identities, dim=dim)


def sample_training_batch(ds: Dataset, P: int, K: int, seed: int = 0) -> TrainingBatch:
    """P identities, K visible + K infrared each, sampled without replacement."""
    if P < 1 or K < 1:
        raise ParameterError("P and K must be >= 1")
    if P > ds.num_identities:
        raise CapacityError(f"requested {P} identities, dataset has {ds.num_identities}")

    rng = np.random.default_rng(seed)
    idents = rng.choice(ds.num_identities, size=P, replace=False)
    halves: dict[Modality, list[Sample]] = {Modality.VIS: [], Modality.IR: []}
    for ident in idents:
        for mod in (Modality.VIS, Modality.IR):
            pool = ds.of(mod, int(ident))
            if len(pool) < K:
                raise CapacityError(
                    f"identity {ident} has {len(pool)} {mod.value} samples, needs {K}"
                )
            chosen = rng.choice(len(pool), size=K, replace=False)
            halves[mod].extend(pool[i] for i in chosen)
    return TrainingBatch(samples=halves[Modality.VIS] + halves[Modality.IR])


def make_inference_scenario(
    ds: Dataset, query_modality: Modality, shots: int = 1, seed: int = 0
) -> InferenceScenario:
    """Gallery of `shots` opposite-modality samples per identity; every
    query-modality sample becomes a query (the gallery never overlaps them)."""
    if shots < 1:
        raise ParameterError("shots must be >= 1")
    query_modality = Modality(query_modality)

    rng = np.random.default_rng(seed)
    gallery_mod = query_modality.other
    gallery: list[Sample] = []
    for ident in range(ds.num_identities):
        pool = ds.of(gallery_mod, ident)
        if len(pool) < shots:
            raise CapacityError(
                f"identity {ident} has {len(pool)} {gallery_mod.value} samples, needs {shots}"
            )
        chosen = rng.choice(len(pool), size=shots, replace=False)
        gallery.extend(pool[i] for i in chosen)
    queries = ds.of(query_modality)
    return InferenceScenario(queries=queries, gallery=gallery, shots=shots)

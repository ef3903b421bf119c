"""Toy experiment: how input quality (Q_X) and topology quality (Q_A) shape the
quality of transferred features Q_Y where Y = A·X.

Triplets are generated with controlled quality: cluster separation is
calibrated by bisection until the measured Q_X hits the target, and affinity
rows are built so that an exact fraction of them rank every positive above
every negative.  Averaging Q_Y over repeats yields the (Q_X, Q_A) → Q_Y
surface behind the sub-optimal-topology argument: with high-quality inputs,
even poor topologies still transfer well.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConvergenceError, ParameterError
from .metrics import affinity_quality, margin_quality

DEFAULT_QX_GRID: tuple[float, ...] = tuple(np.arange(0.0, 2.01, 0.25))
DEFAULT_QA_GRID: tuple[float, ...] = tuple(np.round(np.arange(0.0, 1.01, 0.1), 10))


@dataclass(frozen=True)
class SurfaceCell:
    qx_target: float
    qa_target: float
    qx_achieved: float
    qa_achieved: float
    qy_mean: float
    qy_std: float
    repeats: int

    def __post_init__(self):
        if self.repeats < 1:
            raise ParameterError("repeats must be >= 1")
        for name in ("qx_achieved", "qa_achieved", "qy_mean", "qy_std"):
            if not np.isfinite(getattr(self, name)):
                raise ParameterError(f"{name} must be finite")


def gen_controlled_features(
    qx_target: float,
    n: int,
    classes: int,
    dim: int,
    rng: np.random.Generator,
    noise: float = 1.0,
    rel_tol: float = 0.05,
    max_iter: int = 80,
) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian class clusters whose separation is bisected until the measured
    margin quality lands within 5% (relative, floored at 5% of the noise unit)
    of qx_target."""
    if classes < 2:
        raise ParameterError("need >= 2 classes")
    if n % classes != 0:
        raise ParameterError(f"n={n} must be divisible by classes={classes}")
    if qx_target < 0:
        raise ParameterError("qx_target must be >= 0")
    labels = np.repeat(np.arange(classes), n // classes)
    centers = rng.standard_normal((classes, dim))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    eps = rng.standard_normal((n, dim)) * noise

    def build(s: float) -> np.ndarray:
        return s * centers[labels] + eps

    def q(s: float) -> float:
        return margin_quality(build(s), labels)

    tol = max(rel_tol * qx_target, rel_tol * noise)
    lo = 0.0
    q_lo = q(lo)
    if abs(q_lo - qx_target) <= tol:
        return build(lo), labels
    if q_lo > qx_target:
        raise ConvergenceError(
            f"Q_X={qx_target} unreachable: fully interleaved clusters already measure {q_lo:.4f}"
        )
    hi = max(qx_target, noise)
    for _ in range(64):
        if q(hi) >= qx_target:
            break
        hi *= 2.0
    else:
        raise ConvergenceError(f"could not bracket Q_X={qx_target}")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        q_mid = q(mid)
        if abs(q_mid - qx_target) <= tol:
            return build(mid), labels
        if q_mid < qx_target:
            lo = mid
        else:
            hi = mid
    raise ConvergenceError(f"bisection did not converge to Q_X={qx_target}")


def gen_controlled_affinity(
    qa_target: float,
    labels,
    k: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Row-stochastic affinity whose measured quality equals round(qa·n)/n.

    Good rows spread mass over every classmate and nothing else, so all
    positives beat all (zero) negatives.  Bad rows keep most of their mass on
    classmates but hand one negative column more weight than any positive,
    which breaks the all-positives-first ordering while leaving the bulk of
    the message-passing mass on the right class — the regime in which poor
    topology can still transfer usable features.
    """
    labels = np.asarray(labels)
    n = len(labels)
    if not 0 <= qa_target <= 1:
        raise ParameterError(f"qa_target must lie in [0, 1], got {qa_target}")
    same = labels[:, None] == labels[None, :]
    pos_counts = same.sum(axis=1) - 1
    if (pos_counts == 0).any():
        raise ParameterError("every row needs at least one positive (class sizes >= 2)")
    if (pos_counts == n - 1).all():
        raise ParameterError("need at least two classes")
    n_good = int(round(qa_target * n))
    if n_good > 0 and (pos_counts > k).any():
        raise ParameterError(
            f"good rows need all positives within the k={k} budget "
            f"(largest class has {int(pos_counts.max())} positives)"
        )
    if n_good < n and k < 2:
        raise ParameterError("bad rows need k >= 2 (one positive plus one negative)")

    good = np.zeros(n, dtype=bool)
    good[rng.permutation(n)[:n_good]] = True
    A = np.zeros((n, n))
    for i in range(n):
        pos_js = np.flatnonzero(same[i] & (np.arange(n) != i))
        if good[i]:
            A[i, pos_js] = rng.uniform(0.5, 1.5, len(pos_js))
        else:
            keep = pos_js if len(pos_js) <= k - 1 else rng.choice(pos_js, k - 1, replace=False)
            w = rng.uniform(0.5, 1.5, len(keep))
            A[i, keep] = w
            A[i, rng.choice(np.flatnonzero(~same[i]))] = 1.5 * w.max()
    return A / A.sum(axis=1, keepdims=True)


def _cell(
    qx_target: float,
    qa_target: float,
    repeats: int,
    rng: np.random.Generator,
    n: int,
    classes: int,
    dim: int,
    k: int,
    max_attempts: int,
) -> SurfaceCell:
    qx_m = np.empty(repeats)
    qa_m = np.empty(repeats)
    qy_m = np.empty(repeats)
    for r in range(repeats):
        for attempt in range(max_attempts):
            try:
                X, labels = gen_controlled_features(qx_target, n, classes, dim, rng)
                break
            except ConvergenceError:
                if attempt == max_attempts - 1:
                    raise
        A = gen_controlled_affinity(qa_target, labels, k, rng)
        Y = A @ X
        qx_m[r] = margin_quality(X, labels)
        qa_m[r] = affinity_quality(A, labels)
        qy_m[r] = margin_quality(Y, labels)
    return SurfaceCell(
        qx_target=float(qx_target),
        qa_target=float(qa_target),
        qx_achieved=float(qx_m.mean()),
        qa_achieved=float(qa_m.mean()),
        qy_mean=float(qy_m.mean()),
        qy_std=float(qy_m.std()),
        repeats=repeats,
    )


def qy_surface(
    qx_grid=None,
    qa_grid=None,
    repeats: int = 100,
    rng: np.random.Generator | None = None,
    n: int = 100,
    classes: int = 10,
    dim: int = 16,
    k: int = 10,
    max_attempts: int = 8,
) -> list[SurfaceCell]:
    """Evaluate Q_Y over the (Q_X, Q_A) grid; each cell gets its own spawned
    rng stream, so results are independent of evaluation order."""
    qx_grid = list(DEFAULT_QX_GRID if qx_grid is None else qx_grid)
    qa_grid = list(DEFAULT_QA_GRID if qa_grid is None else qa_grid)
    if not qx_grid or not qa_grid:
        raise ParameterError("grids must be nonempty")
    if repeats < 1:
        raise ParameterError("repeats must be >= 1")
    rng = np.random.default_rng(0) if rng is None else rng
    streams = rng.spawn(len(qx_grid) * len(qa_grid))
    cells = []
    for i, qx in enumerate(qx_grid):
        for j, qa in enumerate(qa_grid):
            child = streams[i * len(qa_grid) + j]
            cells.append(_cell(qx, qa, repeats, child, n, classes, dim, k, max_attempts))
    return cells


SURFACE_CSV_HEADER = "qx_target,qa_target,qx_achieved,qa_achieved,qy_mean,qy_std,repeats"


def surface_to_csv(cells: list[SurfaceCell], path: str | Path) -> None:
    lines = [SURFACE_CSV_HEADER]
    for c in cells:
        lines.append(
            ",".join(
                [
                    repr(float(c.qx_target)),
                    repr(float(c.qa_target)),
                    repr(float(c.qx_achieved)),
                    repr(float(c.qa_achieved)),
                    repr(float(c.qy_mean)),
                    repr(float(c.qy_std)),
                    str(c.repeats),
                ]
            )
        )
    Path(path).write_text("\n".join(lines) + "\n")


def load_surface_csv(path: str | Path) -> list[SurfaceCell]:
    lines = Path(path).read_text().strip().split("\n")
    if lines[0] != SURFACE_CSV_HEADER:
        raise ParameterError(f"unexpected surface CSV header: {lines[0]!r}")
    cells = []
    for line in lines[1:]:
        f = line.split(",")
        cells.append(
            SurfaceCell(
                qx_target=float(f[0]),
                qa_target=float(f[1]),
                qx_achieved=float(f[2]),
                qa_achieved=float(f[3]),
                qy_mean=float(f[4]),
                qy_std=float(f[5]),
                repeats=int(f[6]),
            )
        )
    return cells

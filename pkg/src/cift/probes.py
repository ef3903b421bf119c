"""Recording of non-smooth decision points (top-k selections, hinge activations).

The finite-difference gradient checker perturbs parameters by ±eps; if the
perturbation flips a top-k choice or a hinge's active side, the loss is not
differentiable there and the comparison is meaningless.  Operations with such
kinks report their decision masks here whenever a recorder is active, so the
checker can detect a flip between the two perturbed evaluations and skip that
parameter.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

_stack: list[list[np.ndarray]] = []


@contextmanager
def record_kinks():
    """Collect decision masks of every kinked operation run inside the block."""
    sig: list[np.ndarray] = []
    _stack.append(sig)
    try:
        yield sig
    finally:
        _stack.pop()


def note_kinks(mask) -> None:
    """Report a boolean decision mask to the innermost active recorder, if any."""
    if _stack:
        _stack[-1].append(np.asarray(mask, dtype=bool).copy())


def kinks_equal(a: list[np.ndarray], b: list[np.ndarray]) -> bool:
    """True when two recorded signatures made identical decisions throughout."""
    if len(a) != len(b):
        return False
    return all(x.shape == y.shape and bool(np.array_equal(x, y)) for x, y in zip(a, b))

"""Stacked model vectors and the consensus penalty.

A federated iterate is one local parameter vector per client, stacked into a
single point of R^(n*d).  `ModelVector` stores the stack contiguously so that
norms and updates over the full space are single reductions, and the penalty
``psi(x) = (1/2n) * sum_i ||x_i - mean(x)||^2`` (zero exactly on consensus
points) is evaluated directly on the stack.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "LocalModel",
    "ModelVector",
    "average",
    "psi_value",
    "psi_grad",
]

# A single client's parameters: a finite float vector of shape (d,).
LocalModel = np.ndarray


def _as_matrix(parts: object) -> np.ndarray:
    arr = np.array(parts, dtype=np.float64, order="C", copy=True)
    if arr.ndim != 2:
        raise ValueError(f"expected an (n, d) stack of parts, got shape {arr.shape}")
    return arr


class ModelVector:
    """Immutable stack of n local models of common dimension d.

    The stack lives in one C-contiguous (n, d) float64 buffer; views handed
    out are read-only, and all arithmetic returns new instances, so values
    can be shared freely across threads.
    """

    __slots__ = ("_parts",)

    def __init__(self, parts) -> None:
        arr = _as_matrix(parts)
        n, d = arr.shape
        if n < 1 or d < 1:
            raise ValueError(f"need n >= 1 and d >= 1, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("model vector entries must be finite")
        arr.flags.writeable = False
        self._parts = arr

    @classmethod
    def from_parts(cls, parts: Iterable[Sequence[float]]) -> "ModelVector":
        rows = [np.asarray(p, dtype=np.float64).reshape(-1) for p in parts]
        if not rows:
            raise ValueError("need at least one part")
        d = rows[0].size
        if any(r.size != d for r in rows):
            raise ValueError("all parts must have the same dimension")
        return cls(np.vstack(rows))

    @classmethod
    def zeros(cls, n: int, d: int) -> "ModelVector":
        return cls(np.zeros((n, d)))

    @classmethod
    def replicate(cls, part: Sequence[float], n: int) -> "ModelVector":
        """Consensus point: the same local model on every client."""
        row = np.asarray(part, dtype=np.float64).reshape(1, -1)
        return cls(np.repeat(row, n, axis=0))

    @property
    def parts(self) -> np.ndarray:
        """Read-only (n, d) view of the stack."""
        return self._parts

    @property
    def n(self) -> int:
        return self._parts.shape[0]

    @property
    def d(self) -> int:
        return self._parts.shape[1]

    def part(self, i: int) -> LocalModel:
        return self._parts[i]

    @property
    def flat(self) -> np.ndarray:
        """Read-only length-n*d view, the point in R^(n*d)."""
        return self._parts.reshape(-1)

    def norm(self) -> float:
        return float(np.linalg.norm(self._parts))

    def __add__(self, other: "ModelVector") -> "ModelVector":
        return ModelVector(self._parts + other._parts)

    def __sub__(self, other: "ModelVector") -> "ModelVector":
        return ModelVector(self._parts - other._parts)

    def __mul__(self, scalar: float) -> "ModelVector":
        return ModelVector(self._parts * float(scalar))

    __rmul__ = __mul__

    def __repr__(self) -> str:
        return f"ModelVector(n={self.n}, d={self.d}, norm={self.norm():.6g})"


def average(x: ModelVector) -> LocalModel:
    """Mean of the local models, the d-vector the penalty pulls toward."""
    return x.parts.mean(axis=0)


def psi_value(x: ModelVector) -> float:
    """Consensus penalty (1/2n) * sum_i ||x_i - mean||^2, >= 0."""
    dev = x.parts - x.parts.mean(axis=0)
    return float((dev * dev).sum() / (2.0 * x.n))


def psi_grad(x: ModelVector) -> ModelVector:
    """Gradient of the penalty: part i is (1/n)(x_i - mean).

    The parts are mean-centered, so they sum to the zero vector.
    """
    dev = x.parts - x.parts.mean(axis=0)
    return ModelVector(dev / x.n)

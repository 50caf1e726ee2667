"""Latent vectors: the state the diffusion arithmetic acts on.

A latent is a real array together with its shape descriptor: a flat
length for vector-valued toys, or (height, width) for single-channel
image patches. All arithmetic is double precision.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError


@dataclass(frozen=True)
class Latent:
    values: np.ndarray
    shape: tuple = field(default=None)

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", arr)
        if self.shape is None:
            object.__setattr__(self, "shape", arr.shape)
        if int(np.prod(self.shape)) != arr.size:
            raise ShapeError(
                f"shape descriptor {self.shape} inconsistent with {arr.size} values"
            )
        if not np.all(np.isfinite(arr)):
            raise ShapeError("latent contains non-finite values")

    @property
    def flat(self) -> np.ndarray:
        """The values as a flat 1-D view."""
        return self.values.reshape(-1)

    @property
    def size(self) -> int:
        return self.values.size

    def with_values(self, values: np.ndarray) -> "Latent":
        """A new latent with the same shape descriptor."""
        return Latent(np.asarray(values, dtype=np.float64).reshape(self.shape), self.shape)

    def __add__(self, other):
        return self.with_values(self.values + _coerce(other, self))

    def __sub__(self, other):
        return self.with_values(self.values - _coerce(other, self))

    def __rmul__(self, scalar):
        return self.with_values(float(scalar) * self.values)


def _coerce(other, like: Latent) -> np.ndarray:
    if isinstance(other, Latent):
        if other.shape != like.shape:
            raise ShapeError(f"latent shapes differ: {like.shape} vs {other.shape}")
        return other.values
    return np.asarray(other, dtype=np.float64)


def check_same_shape(a: Latent, b: Latent, what: str = "latents"):
    if a.shape != b.shape:
        raise ShapeError(f"{what} have mismatched shapes: {a.shape} vs {b.shape}")

"""Weighted sequence spaces l^{s,2} and the index operator j.

Two weight conventions are supported:

* ``"bracket"`` -- weight (1 + i^2)^{s/2}, used for membership diagnostics;
* ``"j"``       -- weight i^s, the symbol of the operator j^s.

Since i^2 <= 1 + i^2 <= 2 i^2, the two norms satisfy
``norm_j <= norm_bracket <= 2**(s/2) * norm_j``.

Coordinates are 1-based in the mathematics and 0-based in arrays: array entry
``x[k]`` holds coordinate ``i = k + 1``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, InvalidInputError

BRACKET = "bracket"
J_WEIGHT = "j"
_CONVENTIONS = (BRACKET, J_WEIGHT)


@dataclass(frozen=True)
class WeightSpec:
    """Weight exponent ``s`` together with a weight convention."""

    s: float
    convention: str = BRACKET

    def __post_init__(self):
        if not np.isfinite(self.s) or self.s < 0:
            raise DomainError(f"weight exponent must be finite and >= 0, got {self.s}")
        if self.convention not in _CONVENTIONS:
            raise InvalidInputError(f"unknown weight convention {self.convention!r}")

    def weights(self, n: int) -> np.ndarray:
        """Weights for coordinates ``i = 1..n``."""
        i = np.arange(1, n + 1, dtype=float)
        if self.convention == BRACKET:
            return (1.0 + i * i) ** (0.5 * self.s)
        return i ** self.s


def as_factor_vector(x) -> np.ndarray:
    """Validate and return a 1-D float array of finite coordinates."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1 or arr.size < 1:
        raise InvalidInputError("factor vector must be a non-empty 1-D sequence")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("factor vector has non-finite coordinates")
    return arr


def weighted_norm(x, w: WeightSpec | float = 0.0) -> float:
    """l^{s,2} norm ``(sum_i weight(i)^2 x_i^2)^{1/2}`` of a truncated sequence."""
    if not isinstance(w, WeightSpec):
        w = WeightSpec(float(w))
    x = as_factor_vector(x)
    return float(np.sqrt(np.sum((w.weights(x.size) * x) ** 2)))


def weighted_partial_sums(x, w: WeightSpec | float = 0.0) -> np.ndarray:
    """Cumulative squared weighted sums; entry ``n-1`` is the norm^2 truncated at n."""
    if not isinstance(w, WeightSpec):
        w = WeightSpec(float(w))
    x = as_factor_vector(x)
    return np.cumsum((w.weights(x.size) * x) ** 2)


def apply_j_power(x, a: float) -> np.ndarray:
    """Apply j^a: coordinate i is multiplied by i^a.

    Works on the trailing axis, so batches of factor vectors are accepted.
    """
    if a < 0:
        raise DomainError("negative powers of j are only available via apply_j_inverse_power")
    x = np.asarray(x, dtype=float)
    i = np.arange(1, x.shape[-1] + 1, dtype=float)
    return x * i ** a


def apply_j_inverse_power(x, a: float) -> np.ndarray:
    """Apply j^{-a} (bounded for a >= 0)."""
    if a < 0:
        raise DomainError("exponent must be >= 0")
    x = np.asarray(x, dtype=float)
    i = np.arange(1, x.shape[-1] + 1, dtype=float)
    return x * i ** (-a)


def weight_matrix(w: WeightSpec | float, n: int) -> np.ndarray:
    """Diagonal weight operator on the first ``n`` coordinates."""
    if n < 1:
        raise InvalidInputError("truncation level must be >= 1")
    if not isinstance(w, WeightSpec):
        w = WeightSpec(float(w))
    return np.diag(w.weights(n))


def truncation_sweep(n_max: int, n_min: int = 1) -> list[int]:
    """Doubling sequence n_min, 2 n_min, ... not exceeding n_max (n_max appended)."""
    levels = []
    n = max(1, n_min)
    while n < n_max:
        levels.append(n)
        n *= 2
    levels.append(n_max)
    return levels

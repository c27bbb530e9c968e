"""Regularized system operator as a truncated Taylor polynomial of the smoother.

The smoothing MAP problem solves (I + mu*L) x = y, where the generalized
graph Laplacian is tied to the smoother by L = mu^{-1}(Psi^{-1} - I).
Expanding f(x) = 1/x around a point s > 0 gives

    Psi^{-1} ~= sum_{k=0}^{K} a_k / s^{k+1} (Psi - s I)^k,   a_k = (-1)^k,

so the Laplacian is a degree-K polynomial of Psi and never needs to be
materialized. Because the same mu appears in the Laplacian definition and
in the system, it cancels:

    (I + mu*L) v = v + (Psi^{-1}_K v - v) = Psi^{-1}_K v.

apply_system is therefore implemented *as* the truncated inverse (single
code path); mu is kept only for the Laplacian / regularizer diagnostics.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .graph_filter import DenoiserOperator


def default_coefficients(degree_K: int) -> np.ndarray:
    """Alternating-sign Taylor coefficients a_k = (-1)^k for f(x) = 1/x."""
    if degree_K < 1:
        raise InvalidInputError("degree_K must be >= 1")
    return (-1.0) ** np.arange(degree_K + 1)


@dataclass(eq=False)
class TaylorSystemOperator:
    """Matrix-free (I + mu*L) realized as the degree-K truncated inverse of Psi."""

    psi: DenoiserOperator
    degree_K: int
    coefficients: np.ndarray
    expansion_point_s: float = 1.0
    mu: float = 1.0
    _scaled: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        if self.degree_K < 1:
            raise InvalidInputError("degree_K must be >= 1")
        if self.coefficients.shape != (self.degree_K + 1,):
            raise InvalidInputError(
                f"need {self.degree_K + 1} coefficients, got {self.coefficients.shape}"
            )
        if self.expansion_point_s <= 0.0:
            raise InvalidInputError("expansion point must be positive")
        if self.mu <= 0.0:
            raise InvalidInputError("mu must be positive")
        # c_k = a_k / s^{k+1}; with the default s = 1 this is exact.
        powers = self.expansion_point_s ** np.arange(1, self.degree_K + 2)
        self._scaled = self.coefficients / powers

    @classmethod
    def with_default_coefficients(
        cls,
        psi: DenoiserOperator,
        degree_K: int,
        expansion_point_s: float = 1.0,
        mu: float = 1.0,
    ) -> "TaylorSystemOperator":
        return cls(
            psi=psi,
            degree_K=degree_K,
            coefficients=default_coefficients(degree_K),
            expansion_point_s=expansion_point_s,
            mu=mu,
        )

    @property
    def n(self) -> int:
        return self.psi.n

    def _check(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.shape != (self.n,):
            raise InvalidInputError(f"expected a vector of length {self.n}, got shape {v.shape}")
        return v

    def apply_truncated_inverse_with_cache(
        self, v: np.ndarray
    ) -> tuple[np.ndarray, list[np.ndarray]]:
        """Truncated-inverse apply that returns the recurrence terms t_k.

        t_0 = v, t_{k+1} = Psi t_k - s t_k; the cache enables exact
        reverse-mode differentiation through the polynomial.
        """
        v = self._check(v)
        s = self.expansion_point_s
        c = self._scaled
        t = v
        acc = c[0] * v
        cache = [v]
        for k in range(1, self.degree_K + 1):
            t = self.psi.apply(t) - s * t
            acc = acc + c[k] * t
            cache.append(t)
        return acc, cache

    def apply_truncated_inverse(self, v: np.ndarray) -> np.ndarray:
        """sum_k a_k / s^{k+1} (Psi - s I)^k v, exactly K applies of Psi."""
        acc, _ = self.apply_truncated_inverse_with_cache(v)
        return acc

    def apply_system(self, v: np.ndarray) -> np.ndarray:
        """(I + mu*L) v. The shared-mu cancellation makes this the truncated
        inverse itself, so the output is bitwise independent of mu."""
        return self.apply_truncated_inverse(v)

    def apply_laplacian(self, v: np.ndarray) -> np.ndarray:
        """mu^{-1} (Psi^{-1}_K - I) v; diagnostic path only."""
        return (self.apply_truncated_inverse(v) - self._check(v)) / self.mu

    def glr_value(self, x: np.ndarray) -> float:
        """Smoothness diagnostic x^T L x.

        Truncation can make this slightly negative; callers log the value
        rather than asserting positivity.
        """
        x = self._check(x)
        return float(x @ self.apply_laplacian(x))


def apply_truncated_inverse(op: TaylorSystemOperator, v: np.ndarray) -> np.ndarray:
    return op.apply_truncated_inverse(v)


def apply_system(op: TaylorSystemOperator, v: np.ndarray) -> np.ndarray:
    return op.apply_system(v)


def apply_laplacian(op: TaylorSystemOperator, v: np.ndarray) -> np.ndarray:
    return op.apply_laplacian(v)


def glr_value(op: TaylorSystemOperator, x: np.ndarray) -> float:
    return op.glr_value(x)

"""Polynomial basis families on [0, 1].

Chebyshev, Jacobi and Hermite are evaluated on ``t = 2x - 1``; Monomial uses
``x`` directly and Bernstein uses the binomial closed form. Every family except
Bernstein is driven by a three-term recurrence

    P_{k+1} = (a_k t + b_k) P_k - c_k P_{k-1},

so the same coefficients serve scalar evaluation and operator evaluation.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from math import comb

import numpy as np


class Family(str, enum.Enum):
    MONOMIAL = "monomial"
    CHEBYSHEV = "chebyshev"
    BERNSTEIN = "bernstein"
    JACOBI = "jacobi"
    HERMITE = "hermite"


@dataclass(frozen=True)
class PolyBasis:
    family: Family = Family.MONOMIAL
    jacobi_a: float = 1.0
    jacobi_b: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))

    @property
    def shifted(self) -> bool:
        """True when the recurrence runs on ``t = 2x - 1``."""
        return self.family in (Family.CHEBYSHEV, Family.JACOBI, Family.HERMITE)

    def recurrence(self, k: int) -> tuple[float, float, float]:
        """``(a_k, b_k, c_k)`` producing P_{k+1} from P_k and P_{k-1}."""
        f = self.family
        if f is Family.MONOMIAL:
            return 1.0, 0.0, 0.0
        if f is Family.CHEBYSHEV:
            return (1.0, 0.0, 0.0) if k == 0 else (2.0, 0.0, 1.0)
        if f is Family.HERMITE:
            return 1.0, 0.0, float(k)
        if f is Family.JACOBI:
            a, b = self.jacobi_a, self.jacobi_b
            if k == 0:
                return (a + b + 2) / 2, (a - b) / 2, 0.0
            s = 2 * k + a + b
            denom = 2 * (k + 1) * (k + a + b + 1) * s
            return (
                (s + 1) * (s + 2) * s / denom,
                (s + 1) * (a * a - b * b) / denom,
                2 * (k + a) * (k + b) * (s + 2) / denom,
            )
        raise ValueError(f"{f} has no three-term recurrence")

    def __str__(self) -> str:
        if self.family is Family.JACOBI:
            return f"jacobi({self.jacobi_a:g},{self.jacobi_b:g})"
        return self.family.value


def bernstein_monomial_coeffs(order: int) -> np.ndarray:
    """Matrix C with ``B_{k,K}(x) = sum_j C[k, j] x**j``."""
    C = np.zeros((order + 1, order + 1))
    for k in range(order + 1):
        for j in range(k, order + 1):
            C[k, j] = comb(order, k) * comb(order - k, j - k) * (-1) ** (j - k)
    return C


def basis_values(basis: PolyBasis, order: int, x) -> np.ndarray:
    """``[P_0(x), ..., P_K(x)]``; ``x`` may be a scalar or an array.

    Arguments are clamped to [0, 1] to absorb eigenvalue round-off. For array
    input the basis index is the leading axis.
    """
    if order < 0:
        raise ValueError(f"polynomial order must be >= 0, got {order}")
    x = np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0)
    out = np.empty((order + 1,) + x.shape)

    if basis.family is Family.BERNSTEIN:
        for k in range(order + 1):
            out[k] = comb(order, k) * x**k * (1.0 - x) ** (order - k)
        return out

    t = 2.0 * x - 1.0 if basis.shifted else x
    out[0] = 1.0
    for k in range(order):
        a, b, c = basis.recurrence(k)
        nxt = (a * t + b) * out[k]
        if k > 0 and c:
            nxt = nxt - c * out[k - 1]
        out[k + 1] = nxt
    return out

"""Generalized Gram operators, polynomial kernels and the composite filter.

No n x n matrix is ever formed here: every Gram product goes through the two
sparse factors of :func:`polycf.interactions.normalized_interaction`.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import scipy.sparse as sp

from .basis import Family, PolyBasis, basis_values, bernstein_monomial_coeffs
from .interactions import InteractionMatrix
from .lowpass import LowPassProjector, apply_low_pass


@dataclass(frozen=True)
class GramOperator:
    interactions: InteractionMatrix
    gamma: float
    left: sp.csr_matrix = field(repr=False)
    right: sp.csr_matrix = field(repr=False)

    @classmethod
    def build(cls, R: InteractionMatrix, gamma: float) -> "GramOperator":
        left, right = R.factors(gamma)
        return cls(R, float(gamma), left, right)

    @property
    def num_items(self) -> int:
        return self.interactions.num_items


def apply_gram(op: GramOperator, x: np.ndarray) -> np.ndarray:
    """Order-gamma Gram times ``x`` via the m-dimensional intermediate.

    ``x`` is a length-n vector or an (n, B) block of column signals.
    """
    if x.shape[0] != op.num_items:
        raise ValueError(f"signal length {x.shape[0]} != number of items {op.num_items}")
    return op.left @ (op.right @ x)


def identity_theta(basis: PolyBasis, order: int, num_gammas: int) -> np.ndarray:
    """Coefficients whose polynomial is the constant 1 for every gamma."""
    theta = np.zeros((num_gammas, order + 1))
    if basis.family is Family.BERNSTEIN:
        theta[:] = 1.0  # Bernstein polynomials sum to one
    else:
        theta[:, 0] = 1.0
    return theta


@dataclass(frozen=True)
class PolynomialKernel:
    basis: PolyBasis
    order: int
    gammas: tuple[float, ...]
    theta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "gammas", tuple(float(g) for g in self.gammas))
        theta = np.array(self.theta, dtype=np.float64)
        object.__setattr__(self, "theta", theta)
        if self.order < 0:
            raise ValueError(f"polynomial order must be >= 0, got {self.order}")
        if not self.gammas:
            raise ValueError("at least one normalization order is required")
        if any(not 0.0 <= g <= 1.0 for g in self.gammas):
            raise ValueError(f"normalization orders must lie in [0, 1]: {self.gammas}")
        if theta.shape != (len(self.gammas), self.order + 1):
            raise ValueError(f"theta shape {theta.shape} != ({len(self.gammas)}, {self.order + 1})")
        if not np.all(np.isfinite(theta)):
            raise ValueError("theta contains non-finite values")

    @classmethod
    def identity(cls, basis: PolyBasis, order: int, gammas: Sequence[float]) -> "PolynomialKernel":
        return cls(basis, order, tuple(gammas), identity_theta(basis, order, len(gammas)))

    def with_theta(self, theta: np.ndarray) -> "PolynomialKernel":
        return replace(self, theta=theta)


@dataclass(frozen=True)
class CompositeFilter:
    kernel: PolynomialKernel
    low_pass: LowPassProjector | None = None
    omega: float = 0.0

    def __post_init__(self):
        if self.omega < 0:
            raise ValueError(f"omega must be >= 0, got {self.omega}")

    def with_theta(self, theta: np.ndarray) -> "CompositeFilter":
        return replace(self, kernel=self.kernel.with_theta(theta))

    @property
    def uses_low_pass(self) -> bool:
        return self.low_pass is not None and self.omega != 0.0 and self.low_pass.cutoff > 0


def iter_basis_signals(op: GramOperator, basis: PolyBasis, order: int, x: np.ndarray) -> Iterator[np.ndarray]:
    """Yield ``P_k(G) x`` for k = 0..order using exactly ``order`` Gram products."""
    if basis.family is Family.BERNSTEIN:
        powers = [x]
        for _ in range(order):
            powers.append(apply_gram(op, powers[-1]))
        C = bernstein_monomial_coeffs(order)
        for k in range(order + 1):
            out = np.zeros_like(x, dtype=np.float64)
            for j in range(k, order + 1):
                out += C[k, j] * powers[j]
            yield out
        return

    prev, cur = None, x
    yield cur
    for k in range(order):
        a, b, c = basis.recurrence(k)
        gx = apply_gram(op, cur)
        tx = 2.0 * gx - cur if basis.shifted else gx
        nxt = a * tx
        if b:
            nxt = nxt + b * cur
        if k > 0 and c:
            nxt = nxt - c * prev
        yield nxt
        prev, cur = cur, nxt


def basis_signals(kernel: PolynomialKernel, R: InteractionMatrix, x: np.ndarray) -> np.ndarray:
    """Table ``b[g, k] = P_k(G^(gamma_g)) x``, shape (|Gamma|, K+1) + x.shape."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != R.num_items:
        raise ValueError(f"signal length {x.shape[0]} != number of items {R.num_items}")
    out = np.empty((len(kernel.gammas), kernel.order + 1) + x.shape)
    for g, gamma in enumerate(kernel.gammas):
        op = GramOperator.build(R, gamma)
        for k, sig in enumerate(iter_basis_signals(op, kernel.basis, kernel.order, x)):
            out[g, k] = sig
    return out


def combine_basis(theta: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``(1/|Gamma|) sum_{g,k} theta[g, k] b[g, k]``."""
    return np.tensordot(theta, b, axes=([0, 1], [0, 1])) / theta.shape[0]


def apply_kernel(kernel: PolynomialKernel, R: InteractionMatrix, x: np.ndarray) -> np.ndarray:
    """Polynomial part only; streams basis signals instead of storing them."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != R.num_items:
        raise ValueError(f"signal length {x.shape[0]} != number of items {R.num_items}")
    out = np.zeros(x.shape)
    for g, gamma in enumerate(kernel.gammas):
        op = GramOperator.build(R, gamma)
        for k, sig in enumerate(iter_basis_signals(op, kernel.basis, kernel.order, x)):
            if kernel.theta[g, k] != 0.0:
                out += kernel.theta[g, k] * sig
    return out / len(kernel.gammas)


def apply_composite(f: CompositeFilter, R: InteractionMatrix, x: np.ndarray) -> np.ndarray:
    """Filtered signal: polynomial Gram kernel plus omega times the low-pass projection."""
    out = apply_kernel(f.kernel, R, x)
    if f.uses_low_pass:
        out += f.omega * apply_low_pass(f.low_pass, np.asarray(x, dtype=np.float64))
    return out


@dataclass
class ResponseCurve:
    lambdas: np.ndarray
    gammas: tuple[float, ...]
    per_gamma: np.ndarray  # (|Gamma|, num_points)

    @property
    def total(self) -> np.ndarray:
        return self.per_gamma.mean(axis=0)


def response_curve(kernel: PolynomialKernel, num_points: int = 101) -> ResponseCurve:
    """Sample ``h(lambda) = sum_k theta_k P_k(1 - lambda)`` on a uniform grid over [0, 1]."""
    if num_points < 2:
        raise ValueError("num_points must be >= 2")
    lam = np.linspace(0.0, 1.0, num_points)
    P = basis_values(kernel.basis, kernel.order, 1.0 - lam)  # (K+1, N)
    return ResponseCurve(lam, kernel.gammas, kernel.theta @ P)


def write_response_csv(path: str | Path, curve: ResponseCurve) -> None:
    total = curve.total
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lambda", "gamma", "response", "total"])
        for g, gamma in enumerate(curve.gammas):
            for i, lam in enumerate(curve.lambdas):
                w.writerow([repr(float(lam)), repr(gamma), repr(float(curve.per_gamma[g, i])), repr(float(total[i]))])

"""Dense reference implementations used to check the factored production path.

Everything here starts from a plain dense 0/1 array and uses eigendecompositions,
SVDs and scipy's special functions. Nothing is imported from the filter,
basis or low-pass modules, so a defect there cannot leak into the reference.
Only meant for small matrices.
"""

from __future__ import annotations

from math import comb

import numpy as np
from scipy import special


def _safe_power(d: np.ndarray, p: float) -> np.ndarray:
    out = np.zeros_like(d, dtype=np.float64)
    nz = d > 0
    out[nz] = d[nz] ** p
    return out


def dense_gram(R: np.ndarray, gamma: float) -> np.ndarray:
    """``D_I^-g R^T D_U^-1 R D_I^(g-1)`` by explicit dense products."""
    R = np.asarray(R, dtype=np.float64)
    du = R.sum(axis=1)
    di = R.sum(axis=0)
    left = np.diag(_safe_power(di, -gamma))
    mid = R.T @ np.diag(_safe_power(du, -1.0)) @ R
    right = np.diag(_safe_power(di, gamma - 1.0))
    return left @ mid @ right


def dense_normalized(R: np.ndarray) -> np.ndarray:
    R = np.asarray(R, dtype=np.float64)
    du = R.sum(axis=1)
    di = R.sum(axis=0)
    return np.diag(_safe_power(du, -0.5)) @ R @ np.diag(_safe_power(di, -0.5))


def reference_basis(family: str, order: int, x, jacobi_a: float = 1.0, jacobi_b: float = 1.0) -> np.ndarray:
    """P_0..P_K at ``x`` in [0, 1] from scipy.special / closed forms."""
    x = np.asarray(x, dtype=np.float64)
    t = 2.0 * x - 1.0
    rows = []
    for k in range(order + 1):
        if family == "monomial":
            rows.append(x**k)
        elif family == "chebyshev":
            rows.append(special.eval_chebyt(k, t))
        elif family == "jacobi":
            rows.append(special.eval_jacobi(k, jacobi_a, jacobi_b, t))
        elif family == "hermite":
            rows.append(special.eval_hermitenorm(k, t))
        elif family == "bernstein":
            rows.append(comb(order, k) * x**k * (1.0 - x) ** (order - k))
        else:
            raise ValueError(family)
    return np.array(rows)


def gram_eigensystem(R: np.ndarray, gamma: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Eigenvalues plus right/inverse eigenvector matrices of the dense Gram.

    The order-gamma Gram is diagonally similar to a symmetric matrix; the
    similarity is read off the dense matrix's own item degrees, the symmetric
    form is checked and then diagonalized with ``eigh``. Returns
    ``(lam, W, W_inv)`` with ``G = W diag(lam) W_inv``.
    """
    R = np.asarray(R, dtype=np.float64)
    G = dense_gram(R, gamma)
    di = R.sum(axis=0)
    scale = np.where(di > 0, di, 1.0) ** (0.5 - gamma)
    S = G * (1.0 / scale)[:, None] * scale[None, :]
    asym = np.max(np.abs(S - S.T)) if S.size else 0.0
    if asym > 1e-10 * max(1.0, np.max(np.abs(S))):
        raise AssertionError(f"similarity transform not symmetric ({asym:.2e})")
    lam, Q = np.linalg.eigh((S + S.T) / 2)
    W = scale[:, None] * Q
    W_inv = Q.T / scale[None, :]
    return lam, W, W_inv


def spectral_kernel(R, gammas, theta, family, x, jacobi_a=1.0, jacobi_b=1.0) -> np.ndarray:
    """Polynomial kernel applied through each Gram's eigendecomposition."""
    theta = np.asarray(theta, dtype=np.float64)
    order = theta.shape[1] - 1
    out = np.zeros(np.shape(x))
    for g, gamma in enumerate(gammas):
        lam, W, W_inv = gram_eigensystem(R, gamma)
        # basis argument is 1 - (Laplacian eigenvalue) = Gram eigenvalue
        P = reference_basis(family, order, np.clip(lam, 0.0, 1.0), jacobi_a, jacobi_b)
        h = theta[g] @ P
        out += W @ (h[:, None] * (W_inv @ x) if np.ndim(x) > 1 else h * (W_inv @ x))
    return out / len(gammas)


def dense_svd(R: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Singular values and right singular vectors (columns) of the normalized matrix."""
    _, sig, vt = np.linalg.svd(dense_normalized(R), full_matrices=True)
    return sig, vt.T


def dense_low_pass(R: np.ndarray, s: int, x: np.ndarray) -> np.ndarray:
    _, V = dense_svd(R)
    Vs = V[:, :s]
    return Vs @ (Vs.T @ x)


def spectral_composite(R, gammas, theta, family, omega, s, x, jacobi_a=1.0, jacobi_b=1.0) -> np.ndarray:
    out = spectral_kernel(R, gammas, theta, family, x, jacobi_a, jacobi_b)
    if omega and s:
        out = out + omega * dense_low_pass(R, s, x)
    return out


def subspace_angle(A: np.ndarray, B: np.ndarray) -> float:
    """Largest principal angle (radians) between column spans of A and B."""
    if A.shape[1] == 0:
        return 0.0
    qa, _ = np.linalg.qr(A)
    qb, _ = np.linalg.qr(B)
    # sine form stays accurate for tiny angles
    sin = np.linalg.norm(qb - qa @ (qa.T @ qb), ord=2)
    return float(np.arcsin(min(1.0, sin)))


def rank_all(scores: np.ndarray, exclude) -> list[int]:
    """Every item sorted by score descending, ties by ascending index, excluded items removed."""
    excl = set(int(i) for i in exclude)
    items = [i for i in range(len(scores)) if i not in excl]
    return sorted(items, key=lambda i: (-scores[i], i))


def brute_force_metrics(ranking: list[int], test_items, k: int) -> tuple[float, float]:
    """Recall/NDCG by walking the full ranking position by position."""
    test = set(int(i) for i in test_items)
    hits = 0
    dcg = 0.0
    for pos, item in enumerate(ranking, start=1):
        if pos > k:
            break
        if item in test:
            hits += 1
            dcg += 1.0 / np.log2(pos + 1)
    idcg = 0.0
    for pos in range(1, min(len(test), k) + 1):
        idcg += 1.0 / np.log2(pos + 1)
    return hits / len(test), dcg / idcg

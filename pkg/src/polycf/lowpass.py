"""Ideal low-pass projector from a truncated SVD of the normalized interactions."""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .interactions import InteractionMatrix, _inverse_power

log = logging.getLogger(__name__)

CACHE_MAGIC = b"POLYCF-SVD\0"
CACHE_VERSION = 1
_HEADER = struct.Struct("<IQQ")


class SVDConvergenceError(RuntimeError):
    def __init__(self, message: str, residuals: np.ndarray):
        super().__init__(f"{message}; residual norms: {np.array2string(residuals, precision=3)}")
        self.residuals = residuals


@dataclass(frozen=True)
class LowPassProjector:
    """Orthogonal projector ``V V^T`` onto the top-s right singular vectors."""

    v: np.ndarray
    sigma: np.ndarray

    @property
    def cutoff(self) -> int:
        return self.v.shape[1]

    @property
    def num_items(self) -> int:
        return self.v.shape[0]


def normalized_matrix(R: InteractionMatrix) -> sp.csr_matrix:
    """Symmetrically normalized interactions ``D_U^-1/2 R D_I^-1/2``."""
    du = sp.diags(_inverse_power(R.user_degrees, 0.5))
    di = sp.diags(_inverse_power(R.item_degrees, 0.5))
    return (du @ R.csr @ di).tocsr()


def _fix_signs(v: np.ndarray) -> np.ndarray:
    # largest-magnitude entry of every column positive, for reproducible caches
    if v.shape[1] == 0:
        return v
    idx = np.argmax(np.abs(v), axis=0)
    signs = np.sign(v[idx, np.arange(v.shape[1])])
    signs[signs == 0] = 1.0
    return v * signs


def truncated_svd(
    R: InteractionMatrix,
    s: int,
    seed: int = 0,
    *,
    power_iters: int = 8,
    oversample: int = 16,
    tol: float = 1e-7,
    max_iter: int = 200,
    dense_threshold: int = 256,
) -> LowPassProjector:
    """Top-``s`` right singular vectors of the normalized interaction matrix.

    Small problems (``min(m, n) <= dense_threshold``) use a dense SVD. Larger
    ones use randomized subspace iteration on the sparse matrix: at least
    ``power_iters`` iterations, then continue until the leading singular
    values change by less than ``tol`` (relative to the largest one).
    """
    m, n = R.shape
    if not 0 <= s <= min(m, n):
        raise ValueError(f"cutoff s={s} outside [0, min(m, n)={min(m, n)}]")
    if s == 0:
        return LowPassProjector(v=np.zeros((n, 0)), sigma=np.zeros(0))

    Rn = normalized_matrix(R)
    if min(m, n) <= dense_threshold:
        _, sig, vt = np.linalg.svd(Rn.toarray(), full_matrices=False)
        return LowPassProjector(v=_fix_signs(vt[:s].T.copy()), sigma=sig[:s].copy())

    rng = np.random.default_rng(seed)
    RnT = Rn.T.tocsr()
    width = min(s + oversample, min(m, n))
    Q, _ = np.linalg.qr(Rn @ rng.standard_normal((n, width)))
    prev = None
    for it in range(1, max_iter + 1):
        Z, _ = np.linalg.qr(RnT @ Q)
        Q, _ = np.linalg.qr(Rn @ Z)
        B = (RnT @ Q).T
        ub, sig, vt = np.linalg.svd(B, full_matrices=False)
        if prev is not None and it >= power_iters:
            change = np.max(np.abs(sig[:s] - prev)) / max(sig[0], np.finfo(float).tiny)
            if change < tol:
                log.debug("subspace iteration converged after %d iterations", it)
                break
        prev = sig[:s]
    else:
        u = Q @ ub[:, :s]
        v = vt[:s].T
        residuals = np.linalg.norm(Rn @ v - u * sig[:s], axis=0)
        raise SVDConvergenceError(f"no convergence after {max_iter} iterations", residuals)

    return LowPassProjector(v=_fix_signs(vt[:s].T.copy()), sigma=sig[:s].copy())


def apply_low_pass(p: LowPassProjector, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != p.num_items:
        raise ValueError(f"signal length {x.shape[0]} != projector dimension {p.num_items}")
    return p.v @ (p.v.T @ x)


def save_projector(path: str | Path, p: LowPassProjector) -> None:
    n, s = p.v.shape
    with Path(path).open("wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(_HEADER.pack(CACHE_VERSION, n, s))
        fh.write(np.asarray(p.sigma, dtype="<f8").tobytes())
        fh.write(np.asarray(p.v, dtype="<f8").tobytes(order="F"))


def load_projector(path: str | Path) -> LowPassProjector:
    raw = Path(path).read_bytes()
    if not raw.startswith(CACHE_MAGIC):
        raise ValueError(f"{path}: not an SVD cache file")
    off = len(CACHE_MAGIC)
    version, n, s = _HEADER.unpack_from(raw, off)
    if version != CACHE_VERSION:
        raise ValueError(f"{path}: unsupported cache version {version}")
    off += _HEADER.size
    expected = off + 8 * (s + n * s)
    if len(raw) != expected:
        raise ValueError(f"{path}: truncated cache ({len(raw)} bytes, expected {expected})")
    sigma = np.frombuffer(raw, dtype="<f8", count=s, offset=off).astype(np.float64)
    off += 8 * s
    v = np.frombuffer(raw, dtype="<f8", count=n * s, offset=off).reshape((n, s), order="F")
    return LowPassProjector(v=np.array(v, dtype=np.float64), sigma=sigma)


def cache_path(cache_dir: str | Path, dataset_hash: str, s: int, seed: int) -> Path:
    return Path(cache_dir) / f"svd_{dataset_hash[:16]}_s{s}_seed{seed}.bin"


def cached_truncated_svd(
    R: InteractionMatrix, s: int, seed: int, cache_dir: str | Path, **kwargs
) -> LowPassProjector:
    """``truncated_svd`` backed by a cache file keyed on (content hash, s, seed)."""
    path = cache_path(cache_dir, R.content_hash(), s, seed)
    if path.exists():
        try:
            p = load_projector(path)
        except ValueError as exc:
            log.warning("ignoring unreadable SVD cache: %s", exc)
        else:
            if p.v.shape == (R.num_items, s):
                return p
            log.warning("SVD cache %s does not match (n=%d, s=%d); rebuilding", path, R.num_items, s)
    p = truncated_svd(R, s, seed, **kwargs)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_projector(path, p)
    return p

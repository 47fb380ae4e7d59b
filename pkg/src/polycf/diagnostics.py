"""Small-scale checks: rank bound of embedding models, spectra of the
generalized Grams, ablation variants and kernel transfer.

The dense routines here go through :mod:`polycf.oracles`, never through the
factored production operators.
"""

from __future__ import annotations

import enum
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import oracles
from .basis import Family, PolyBasis
from .checkpoint import load_checkpoint
from .evaluation import EvalResult, evaluate
from .filters import CompositeFilter, PolynomialKernel, apply_composite
from .interactions import Dataset, InteractionMatrix
from .lowpass import LowPassProjector, truncated_svd
from .training import FilterSpec, initial_theta

MAX_DENSE = 100


class ScaleError(ValueError):
    pass


def _guard(*dims: int) -> None:
    if max(dims) > MAX_DENSE:
        raise ScaleError(f"dense diagnostics are limited to {MAX_DENSE} users/items, got {dims}")


@dataclass
class EmbeddingSim:
    user_emb: np.ndarray  # (m, d)
    item_emb: np.ndarray  # (n, d)
    poly_coeffs: np.ndarray  # alpha_0..alpha_K

    def __post_init__(self):
        if self.user_emb.shape[1] != self.item_emb.shape[1] or self.user_emb.shape[1] < 1:
            raise ValueError("user and item embeddings need the same dimension d >= 1")
        if not (np.all(np.isfinite(self.user_emb)) and np.all(np.isfinite(self.item_emb))):
            raise ValueError("embeddings must be finite")

    @property
    def embedding_dim(self) -> int:
        return self.user_emb.shape[1]

    @classmethod
    def random(cls, m: int, n: int, d: int, order: int, rng: np.random.Generator) -> "EmbeddingSim":
        return cls(rng.normal(size=(m, d)), rng.normal(size=(n, d)), rng.normal(size=order + 1))


def verify_rank_bound(sim: EmbeddingSim, R: InteractionMatrix, rel_tol: float = 1e-8) -> dict:
    """Propagate embeddings with a polynomial of the normalized bipartite adjacency
    and report the numerical rank of the resulting score matrix."""
    m, n = R.shape
    _guard(m, n)
    Rn = oracles.dense_normalized(R.to_dense())
    A = np.block([[np.zeros((m, m)), Rn], [Rn.T, np.zeros((n, n))]])
    E = np.vstack([sim.user_emb, sim.item_emb])
    prop = np.zeros_like(E)
    term = E.copy()
    for alpha in sim.poly_coeffs:
        prop += alpha * term
        term = A @ term
    scores = prop[:m] @ prop[m:].T
    sv = np.linalg.svd(scores, compute_uv=False)
    rank = int(np.sum(sv > rel_tol * sv[0])) if sv.size and sv[0] > 0 else 0
    return {
        "rank": rank,
        "embedding_dim": sim.embedding_dim,
        "bound_holds": rank <= sim.embedding_dim,
        "singular_values": sv.tolist(),
        "scores": scores,
    }


def _scale(R: np.ndarray, power: float) -> np.ndarray:
    d = R.sum(axis=0)
    return np.where(d > 0, d, 1.0) ** power


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def _direction_residual(a: np.ndarray, b: np.ndarray) -> float:
    a, b = _unit(a), _unit(b)
    return float(min(np.linalg.norm(a - b), np.linalg.norm(a + b)))


def _simple(lam: np.ndarray, gap: float) -> np.ndarray:
    if len(lam) < 2:
        return np.ones(len(lam), dtype=bool)
    d = np.abs(lam[:, None] - lam[None, :])
    np.fill_diagonal(d, np.inf)
    return d.min(axis=1) > gap


@dataclass
class SpectrumPairReport:
    gammas: tuple[float, float]
    eigenvalue_discrepancy: float
    range_violation: float
    max_imag: float
    simple_eigenvalues: int
    left_map_residual: float  # nu1 ~ D^(g1-g2) nu2 for left eigenvectors
    right_map_residual: float  # mu1 ~ D^(g2-g1) mu2 for right eigenvectors
    right_literal_residual: float  # mu1 ~ D^(g1-g2) mu2 applied to right eigenvectors


def verify_theorem2(R: InteractionMatrix, gamma_pairs, gap: float = 1e-6) -> list[SpectrumPairReport]:
    """Dense eigendecompositions of the generalized Grams for each pair of orders."""
    _guard(*R.shape)
    D = R.to_dense()
    out = []
    for g1, g2 in gamma_pairs:
        G1, G2 = oracles.dense_gram(D, g1), oracles.dense_gram(D, g2)
        lam1, W1 = np.linalg.eig(G1)
        lam2, W2 = np.linalg.eig(G2)
        mu1, V1 = np.linalg.eig(G1.T)
        mu2, V2 = np.linalg.eig(G2.T)
        imag = max(np.abs(lam1.imag).max(), np.abs(lam2.imag).max())
        l1, l2 = np.sort(lam1.real), np.sort(lam2.real)
        disc = float(np.max(np.abs(l1 - l2)))
        viol = float(max(0.0, -min(l1.min(), l2.min()), max(l1.max(), l2.max()) - 1.0))

        left = right = literal = 0.0
        simple = _simple(lam1.real, gap)
        d_fwd = _scale(D, g1 - g2)
        d_bwd = _scale(D, g2 - g1)
        for i in np.flatnonzero(simple):
            lam = lam1[i].real
            j = int(np.argmin(np.abs(lam2.real - lam)))
            a = int(np.argmin(np.abs(mu1.real - lam)))
            b = int(np.argmin(np.abs(mu2.real - lam)))
            right = max(right, _direction_residual(W1[:, i].real, d_bwd * W2[:, j].real))
            literal = max(literal, _direction_residual(W1[:, i].real, d_fwd * W2[:, j].real))
            left = max(left, _direction_residual(V1[:, a].real, d_fwd * V2[:, b].real))
        out.append(SpectrumPairReport((g1, g2), disc, viol, float(imag), int(simple.sum()), left, right, literal))
    return out


def oracle_discrepancy(f: CompositeFilter, R: InteractionMatrix, x: np.ndarray) -> float:
    """Relative gap between the factored filter and its dense spectral oracle."""
    _guard(*R.shape)
    k = f.kernel
    s = f.low_pass.cutoff if f.uses_low_pass else 0
    ref = oracles.spectral_composite(
        R.to_dense(), k.gammas, k.theta, k.basis.family.value, f.omega, s, x,
        k.basis.jacobi_a, k.basis.jacobi_b,
    )
    got = apply_composite(f, R, x)
    return float(np.linalg.norm(got - ref) / max(np.linalg.norm(ref), 1e-300))


class Variant(str, enum.Enum):
    FULL = "full"
    WO_POLY = "wo_poly"
    WO_KERNEL = "wo_kernel"
    WO_NORM = "wo_norm"
    WO_LOW = "wo_low"


def build_ablation(variant: Variant | str, base: FilterSpec) -> FilterSpec:
    variant = Variant(variant)
    if variant is Variant.FULL:
        return replace(base)
    if variant is Variant.WO_POLY:
        return replace(base, trainable=False, theta=np.zeros((len(base.gammas), base.order + 1)))
    if variant is Variant.WO_KERNEL:
        theta = np.zeros((len(base.gammas), 2))
        theta[:, 1] = 1.0
        return replace(base, basis=PolyBasis(Family.MONOMIAL), order=1, trainable=False, theta=theta)
    if variant is Variant.WO_NORM:
        return replace(base, gammas=(0.5,))
    return replace(base, omega=0.0)


@dataclass
class TransferReport:
    transferred: EvalResult
    random_init: EvalResult
    seeds: list[int] = field(default_factory=list)

    @property
    def relative_improvement(self) -> dict[str, float]:
        return {
            "recall": self.transferred.recall_at_k / self.random_init.recall_at_k - 1.0,
            "ndcg": self.transferred.ndcg_at_k / self.random_init.ndcg_at_k - 1.0,
        }

    def to_json(self) -> str:
        keep = ("recall_at_k", "ndcg_at_k", "k", "users_evaluated")
        return json.dumps({
            "transferred": {k: v for k, v in asdict(self.transferred).items() if k in keep},
            "random_init": {k: v for k, v in asdict(self.random_init).items() if k in keep},
            "random_init_seeds": self.seeds,
            "relative_improvement": self.relative_improvement,
        }, indent=2)


def transfer_kernel(
    checkpoint: str | Path,
    target: Dataset,
    *,
    expect: FilterSpec | None = None,
    projector: LowPassProjector | None = None,
    k: int = 20,
    seeds=range(5),
    jitter: float = 0.01,
) -> TransferReport:
    """Evaluate coefficients trained elsewhere on ``target`` against random initializations.

    The low-pass projector is always the target's own.
    """
    ckpt = load_checkpoint(checkpoint)
    if expect is not None and (ckpt.basis != expect.basis or ckpt.order != expect.order):
        raise ValueError(
            f"checkpoint kernel ({ckpt.basis}, K={ckpt.order}) does not match "
            f"expected ({expect.basis}, K={expect.order})"
        )
    if projector is None:
        projector = truncated_svd(target.train, ckpt.svd_cutoff, ckpt.svd_seed)
    moved = evaluate(ckpt.to_filter(projector), target, k)

    recalls, ndcgs, users = [], [], 0
    for seed in seeds:
        theta = initial_theta(ckpt.basis, ckpt.order, len(ckpt.gammas), np.random.default_rng(seed), jitter)
        kernel = PolynomialKernel(ckpt.basis, ckpt.order, ckpt.gammas, theta)
        res = evaluate(CompositeFilter(kernel, projector, ckpt.omega), target, k)
        recalls.append(res.recall_at_k)
        ndcgs.append(res.ndcg_at_k)
        users = res.users_evaluated
    baseline = EvalResult(float(np.mean(recalls)), float(np.mean(ndcgs)), k, users)
    return TransferReport(moved, baseline, list(seeds))

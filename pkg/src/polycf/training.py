"""Optimization of the kernel coefficients with the graph-smoothness and BPR objectives.

Scores are linear in the coefficient table, so both objectives have closed-form
gradients in terms of the basis signals ``b[g, k] = P_k(G^(gamma_g)) x``:

    d r* / d theta[g, k] = b[g, k] / |Gamma|

The projector and ``omega`` stay fixed.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .basis import PolyBasis
from .evaluation import EvalResult, evaluate
from .filters import (
    CompositeFilter,
    GramOperator,
    PolynomialKernel,
    apply_gram,
    basis_signals,
    combine_basis,
    identity_theta,
)
from .interactions import Dataset, InteractionMatrix
from .lowpass import LowPassProjector, apply_low_pass

log = logging.getLogger(__name__)

# the smoothness penalty always uses the symmetric Gram
SMOOTHNESS_GAMMA = 0.5
# bytes of basis-signal storage a training chunk may hold
CHUNK_BUDGET = 256 * 2**20


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 50
    batch_users: int = 1024
    noise_eps: float = 0.1
    kernel_dropout: float = 0.2
    negatives_per_positive: int = 1
    rng_seed: int = 0
    init_jitter: float = 0.01
    workers: int = 1
    chunk_size: int | None = None
    eval_k: int = 20

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_users < 1:
            raise ValueError("batch_users must be >= 1")
        if self.noise_eps < 0:
            raise ValueError("noise_eps must be >= 0")
        if not 0 <= self.kernel_dropout < 1:
            raise ValueError("kernel_dropout must lie in [0, 1)")
        if self.negatives_per_positive < 1:
            raise ValueError("negatives_per_positive must be >= 1")


@dataclass
class FilterSpec:
    """What to build and whether its coefficients are trained."""

    basis: PolyBasis = field(default_factory=PolyBasis)
    order: int = 5
    gammas: tuple[float, ...] = (0.3, 0.4, 0.5, 0.6)
    omega: float = 0.3
    cutoff: int = 256
    svd_seed: int = 0
    trainable: bool = True
    theta: np.ndarray | None = None  # fixed coefficients; None -> jittered identity


@dataclass
class TripleBatch:
    users: np.ndarray
    pos: np.ndarray
    neg: np.ndarray
    skipped: int = 0

    def __len__(self) -> int:
        return len(self.users)


@dataclass
class EpochLog:
    epoch: int
    loss_graph: float
    loss_bpr: float
    val: EvalResult | None = None

    @property
    def loss_total(self) -> float:
        return self.loss_graph + self.loss_bpr


@dataclass
class TrainResult:
    filter: CompositeFilter
    log: list[EpochLog]


def eligible_users(R: InteractionMatrix) -> np.ndarray:
    deg = R.user_degrees
    return np.flatnonzero((deg > 0) & (deg < R.num_items))


def sample_triples(
    R: InteractionMatrix,
    batch_users: int,
    negatives: int,
    rng: np.random.Generator,
    pool: np.ndarray | None = None,
) -> TripleBatch:
    """Distinct users, one positive each and ``negatives`` rejection-sampled negatives."""
    deg = R.user_degrees
    if pool is None:
        pool = np.flatnonzero(deg > 0)
    full = deg[pool] >= R.num_items
    skipped = int(full.sum())
    pool = pool[~full]
    if len(pool) == 0:
        return TripleBatch(*(np.zeros(0, dtype=np.int64) for _ in range(3)), skipped=skipped)
    chosen = rng.choice(pool, size=min(batch_users, len(pool)), replace=False)
    users, pos, neg = [], [], []
    n = R.num_items
    for u in chosen:
        items = R.items_of(u)
        i = items[rng.integers(len(items))]
        for _ in range(negatives):
            while True:
                j = rng.integers(n)
                at = np.searchsorted(items, j)
                if at == len(items) or items[at] != j:
                    break
            users.append(u)
            pos.append(i)
            neg.append(j)
    as_arr = lambda a: np.asarray(a, dtype=np.int64)
    return TripleBatch(as_arr(users), as_arr(pos), as_arr(neg), skipped)


def apply_kernel_dropout(theta: np.ndarray, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Inverted dropout on individual coefficients."""
    if rate == 0:
        return np.array(theta, dtype=np.float64)
    keep = rng.random(np.shape(theta)) >= rate
    return np.where(keep, theta / (1.0 - rate), 0.0)


def _low_pass_term(f: CompositeFilter, x: np.ndarray) -> np.ndarray | float:
    return f.omega * apply_low_pass(f.low_pass, x) if f.uses_low_pass else 0.0


def _smoothness(R: InteractionMatrix, e: np.ndarray) -> np.ndarray:
    """``(I - G^(1/2)) e``."""
    return e - apply_gram(GramOperator.build(R, SMOOTHNESS_GAMMA), e)


def _graph_chunk(f: CompositeFilter, R: InteractionMatrix, X: np.ndarray, Z: np.ndarray):
    """Summed graph loss and its gradient for a block of users (columns)."""
    noisy = X + Z
    b = basis_signals(f.kernel, R, noisy)
    r_star = combine_basis(f.kernel.theta, b) + _low_pass_term(f, noisy)
    e = r_star - X
    w = _smoothness(R, e)
    loss = float(np.sum(e * w))
    grad = (2.0 / len(f.kernel.gammas)) * np.tensordot(b, w, axes=([2, 3], [0, 1]) if X.ndim == 2 else ([2], [0]))
    return loss, grad


def _bpr_chunk(f: CompositeFilter, R: InteractionMatrix, X: np.ndarray, cols, pos, neg):
    """Summed BPR loss and gradient; ``cols`` index the users' columns in ``X``."""
    b = basis_signals(f.kernel, R, X)
    r_star = combine_basis(f.kernel.theta, b) + _low_pass_term(f, X)
    d = r_star[pos, cols] - r_star[neg, cols]
    loss = float(np.sum(np.logaddexp(0.0, -d)))
    diff = b[:, :, pos, cols] - b[:, :, neg, cols]
    grad = diff @ (-expit(-d)) / len(f.kernel.gammas)
    return loss, grad


def graph_objective(
    f: CompositeFilter,
    R: InteractionMatrix,
    u: int,
    noise_eps: float,
    rng: np.random.Generator | None = None,
    z: np.ndarray | None = None,
) -> tuple[float, np.ndarray]:
    """Smoothness loss of the filtered noisy row of user ``u`` and its gradient.

    ``z`` pins the noise; otherwise it is drawn from N(0, noise_eps I).
    """
    if noise_eps < 0:
        raise ValueError("noise_eps must be >= 0")
    x = R.row(u)
    if z is None:
        z = rng.normal(0.0, math.sqrt(noise_eps), size=x.shape) if noise_eps else np.zeros_like(x)
    return _graph_chunk(f, R, x, np.asarray(z, dtype=np.float64))


def bpr_loss(f: CompositeFilter, R: InteractionMatrix, batch: TripleBatch) -> tuple[float, np.ndarray]:
    """Mean BPR loss over the triples and its gradient."""
    if len(batch) == 0:
        raise ValueError("empty triple batch")
    uniq, cols = np.unique(batch.users, return_inverse=True)
    loss, grad = _bpr_chunk(f, R, R.rows(uniq), cols, batch.pos, batch.neg)
    return loss / len(batch), grad / len(batch)


def initial_theta(basis: PolyBasis, order: int, num_gammas: int, rng: np.random.Generator, jitter: float = 0.01) -> np.ndarray:
    theta = identity_theta(basis, order, num_gammas)
    return theta + rng.normal(0.0, jitter, size=theta.shape)


def build_filter(spec: FilterSpec, projector: LowPassProjector | None, rng: np.random.Generator, jitter: float = 0.01) -> CompositeFilter:
    if spec.theta is not None:
        theta = np.array(spec.theta, dtype=np.float64)
    else:
        theta = initial_theta(spec.basis, spec.order, len(spec.gammas), rng, jitter)
    kernel = PolynomialKernel(spec.basis, spec.order, tuple(spec.gammas), theta)
    return CompositeFilter(kernel, projector, spec.omega if projector is not None else 0.0)


def _chunk_size(config: TrainConfig, f: CompositeFilter, n: int) -> int:
    if config.chunk_size:
        return config.chunk_size
    per_user = 2 * 8 * n * len(f.kernel.gammas) * (f.kernel.order + 1)
    return max(1, min(config.batch_users, CHUNK_BUDGET // per_user))


def batch_step(
    f: CompositeFilter,
    R: InteractionMatrix,
    batch: TripleBatch,
    Z: dict[int, np.ndarray],
    chunk: int,
    workers: int = 1,
) -> tuple[float, float, np.ndarray]:
    """Mean graph loss, mean BPR loss and the summed-objective gradient for one batch."""
    users = np.unique(batch.users)
    parts = [users[i:i + chunk] for i in range(0, len(users), chunk)]

    def run(block: np.ndarray):
        X = R.rows(block)
        Zb = np.stack([Z[int(u)] for u in block], axis=1)
        lg, gg = _graph_chunk(f, R, X, Zb)
        sel = np.isin(batch.users, block)
        cols = np.searchsorted(block, batch.users[sel])
        lb, gb = _bpr_chunk(f, R, X, cols, batch.pos[sel], batch.neg[sel])
        return lg, gg, lb, gb

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(run, parts))
    else:
        results = [run(p) for p in parts]

    # fixed reduction order keeps runs reproducible
    lg = sum(r[0] for r in results) / len(users)
    lb = sum(r[2] for r in results) / len(batch)
    grad = sum(r[1] for r in results) / len(users) + sum(r[3] for r in results) / len(batch)
    return lg, lb, grad


def train(
    dataset: Dataset,
    config: TrainConfig,
    spec: FilterSpec,
    projector: LowPassProjector | None = None,
    validation: Dataset | None = None,
) -> TrainResult:
    """Mini-batch SGD on ``L_graph + L_bpr`` over the kernel coefficients."""
    R = dataset.train
    seeds = np.random.SeedSequence(config.rng_seed).spawn(4)
    init_rng, sample_rng, noise_rng, drop_rng = (np.random.default_rng(s) for s in seeds)

    f = build_filter(spec, projector, init_rng, config.init_jitter)
    if not spec.trainable or config.epochs == 0:
        return TrainResult(f, [])

    pool = eligible_users(R)
    if len(pool) == 0:
        raise ValueError("no user has both interacted and non-interacted items")
    batches = math.ceil(len(pool) / config.batch_users)
    chunk = _chunk_size(config, f, R.num_items)
    std = math.sqrt(config.noise_eps)
    theta = f.kernel.theta.copy()
    history: list[EpochLog] = []

    for epoch in range(config.epochs):
        sum_g = sum_b = 0.0
        for _ in range(batches):
            batch = sample_triples(R, config.batch_users, config.negatives_per_positive, sample_rng, pool)
            users = np.unique(batch.users)
            Z = {int(u): noise_rng.normal(0.0, std, R.num_items) for u in users}
            scale = apply_kernel_dropout(np.ones_like(theta), config.kernel_dropout, drop_rng)
            dropped = f.with_theta(theta * scale)
            lg, lb, grad = batch_step(dropped, R, batch, Z, chunk, config.workers)
            if not (math.isfinite(lg) and math.isfinite(lb) and np.all(np.isfinite(grad))):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch} (graph={lg}, bpr={lb}); theta=\n"
                    + np.array2string(theta, precision=6)
                )
            theta = theta - config.learning_rate * scale * grad
            sum_g += lg
            sum_b += lb
        f = f.with_theta(theta)
        val = evaluate(f, validation, config.eval_k) if validation is not None else None
        entry = EpochLog(epoch, sum_g / batches, sum_b / batches, val)
        history.append(entry)
        log.info(
            "epoch %d  graph %.6f  bpr %.6f%s", epoch, entry.loss_graph, entry.loss_bpr,
            f"  val recall@{config.eval_k} {val.recall_at_k:.4f}" if val else "",
        )
    return TrainResult(f, history)


def write_loss_log(path: str | Path, history: list[EpochLog]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss_graph", "loss_bpr", "loss_total", "val_recall20", "val_ndcg20"])
        for e in history:
            w.writerow([
                e.epoch, repr(e.loss_graph), repr(e.loss_bpr), repr(e.loss_total),
                repr(e.val.recall_at_k) if e.val else "",
                repr(e.val.ndcg_at_k) if e.val else "",
            ])


def split_validation(dataset: Dataset, fraction: float, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Hold out ``fraction`` of each user's train items as a validation set."""
    if not 0 < fraction < 1:
        raise ValueError("fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    R = dataset.train
    keep_u, keep_i, held = [], [], []
    for u in range(R.num_users):
        items = R.items_of(u)
        n_val = int(round(fraction * len(items))) if len(items) > 1 else 0
        perm = rng.permutation(items)
        held.append(np.sort(perm[:n_val]))
        rest = perm[n_val:]
        keep_u.append(np.full(len(rest), u))
        keep_i.append(rest)
    reduced = InteractionMatrix.from_pairs(np.concatenate(keep_u), np.concatenate(keep_i), *R.shape)
    train_part = Dataset(reduced, dataset.test, dataset.name, dataset.source_hashes)
    val_part = Dataset(reduced, held, f"{dataset.name}-val", dataset.source_hashes)
    return train_part, val_part

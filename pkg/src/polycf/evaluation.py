"""Full-ranking Recall@K / NDCG@K evaluation."""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .filters import CompositeFilter, apply_composite
from .interactions import Dataset, InteractionMatrix

MASKED = -np.inf


@dataclass
class EvalResult:
    recall_at_k: float
    ndcg_at_k: float
    k: int
    users_evaluated: int
    per_user: np.ndarray | None = None  # (users_evaluated, 2): recall, ndcg
    users: np.ndarray | None = None

    def to_json(self, dataset: str, config_hash: str = "") -> str:
        return json.dumps(
            {
                "dataset": dataset,
                "k": self.k,
                "recall": self.recall_at_k,
                "ndcg": self.ndcg_at_k,
                "users_evaluated": self.users_evaluated,
                "config_hash": config_hash,
            },
            indent=2,
        )

    def write_per_user(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["user", "recall", "ndcg"])
            for u, (r, n) in zip(self.users, self.per_user):
                w.writerow([int(u), repr(float(r)), repr(float(n))])


def score_users(f: CompositeFilter, R: InteractionMatrix, users) -> np.ndarray:
    """Scores for a block of users, shape (len(users), n), train items masked."""
    users = np.asarray(users, dtype=np.int64)
    X = R.rows(users)
    S = np.ascontiguousarray(apply_composite(f, R, X).T)
    sub = R.csr[users]
    rows = np.repeat(np.arange(len(users)), np.diff(sub.indptr))
    S[rows, sub.indices] = MASKED
    return S


def score_user(f: CompositeFilter, R: InteractionMatrix, u: int) -> np.ndarray:
    return score_users(f, R, [u])[0]


def top_k(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k best finite scores; ties go to the smaller item index.

    Uses a partial selection to find the k-th largest value and only sorts the
    candidates at or above it.
    """
    if k <= 0:
        return np.zeros(0, dtype=np.int64)
    finite = np.flatnonzero(scores > MASKED)
    if len(finite) <= k:
        cand = finite
    else:
        vals = scores[finite]
        kth = np.partition(vals, len(vals) - k)[len(vals) - k]
        cand = finite[vals >= kth]
    order = np.lexsort((cand, -scores[cand]))
    return cand[order[:k]]


def recall_at_k(ranked, test_items, k: int) -> float:
    test = np.asarray(test_items)
    if len(test) == 0:
        raise ValueError("empty test set")
    hits = np.isin(np.asarray(ranked)[:k], test).sum()
    return float(hits) / len(test)


def _discounts(k: int) -> np.ndarray:
    return 1.0 / np.log2(np.arange(2, k + 2))


def _rank_order_sum(v: np.ndarray) -> float:
    return float(np.cumsum(v)[-1]) if len(v) else 0.0


def ndcg_at_k(ranked, test_items, k: int) -> float:
    test = np.asarray(test_items)
    if len(test) == 0:
        raise ValueError("empty test set")
    top = np.asarray(ranked)[:k]
    hit = np.isin(top, test)
    # accumulate in rank order so the sums do not depend on numpy's pairwise reduction
    dcg = _rank_order_sum(_discounts(len(top))[hit])
    idcg = _rank_order_sum(_discounts(min(len(test), k)))
    return float(dcg / idcg)


def evaluation_users(dataset: Dataset) -> np.ndarray:
    """Users with a nonempty test set and at least one train interaction."""
    users = dataset.test_users()
    return users[dataset.train.user_degrees[users] > 0]


def evaluate(
    f: CompositeFilter,
    dataset: Dataset,
    k: int = 20,
    *,
    chunk_size: int = 256,
    workers: int = 1,
    keep_per_user: bool = False,
) -> EvalResult:
    R = dataset.train
    users = evaluation_users(dataset)
    chunks = [users[i:i + chunk_size] for i in range(0, len(users), chunk_size)]

    def run(block: np.ndarray) -> np.ndarray:
        S = score_users(f, R, block)
        out = np.empty((len(block), 2))
        for row, u in enumerate(block):
            ranked = top_k(S[row], k)
            out[row] = recall_at_k(ranked, dataset.test[u], k), ndcg_at_k(ranked, dataset.test[u], k)
        return out

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(run, chunks))
    else:
        parts = [run(c) for c in chunks]
    per_user = np.concatenate(parts) if parts else np.zeros((0, 2))
    mean = per_user.mean(axis=0) if len(per_user) else np.zeros(2)
    return EvalResult(
        recall_at_k=float(mean[0]),
        ndcg_at_k=float(mean[1]),
        k=k,
        users_evaluated=len(users),
        per_user=per_user if keep_per_user else None,
        users=users if keep_per_user else None,
    )

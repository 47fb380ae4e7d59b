"""Interaction matrices, dataset loading and the generalized-normalized factors."""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

log = logging.getLogger(__name__)

# guards against files whose ids are not dense indices
MAX_ID_PER_LINE = 10


class DatasetFormatError(ValueError):
    pass


def _inverse_power(degrees: np.ndarray, power: float) -> np.ndarray:
    """degrees**(-power), with zero-degree entries mapped to 0."""
    out = np.zeros(degrees.shape, dtype=np.float64)
    nz = degrees > 0
    out[nz] = np.power(degrees[nz].astype(np.float64), -power)
    return out


class InteractionMatrix:
    """Binary user x item matrix with train-set degree vectors.

    Stored twice: CSR for ``R`` and CSR of the transpose for ``R^T``, so the
    factored Gram products are fast in both orientations.
    """

    def __init__(self, matrix, shape: tuple[int, int] | None = None):
        csr = sp.csr_matrix(matrix, shape=shape, dtype=np.float64)
        csr.sum_duplicates()
        csr.data[:] = 1.0
        csr.eliminate_zeros()
        csr.sort_indices()
        m, n = csr.shape
        if m < 1 or n < 1:
            raise ValueError(f"interaction matrix needs m, n >= 1, got {csr.shape}")
        self._csr = csr
        self._csr_t = csr.T.tocsr()
        self._csr_t.sort_indices()
        self.user_degrees = np.diff(csr.indptr).astype(np.int64)
        self.item_degrees = np.diff(self._csr_t.indptr).astype(np.int64)
        self._factors: dict[float, tuple[sp.csr_matrix, sp.csr_matrix]] = {}

    @classmethod
    def from_pairs(cls, users, items, num_users: int, num_items: int) -> "InteractionMatrix":
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        data = np.ones(len(users), dtype=np.float64)
        coo = sp.coo_matrix((data, (users, items)), shape=(num_users, num_items))
        return cls(coo)

    @property
    def num_users(self) -> int:
        return self._csr.shape[0]

    @property
    def num_items(self) -> int:
        return self._csr.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self._csr.shape

    @property
    def nnz(self) -> int:
        return self._csr.nnz

    @property
    def csr(self) -> sp.csr_matrix:
        return self._csr

    @property
    def csr_t(self) -> sp.csr_matrix:
        return self._csr_t

    def items_of(self, user: int) -> np.ndarray:
        """Sorted train item indices of ``user``."""
        return self._csr.indices[self._csr.indptr[user]:self._csr.indptr[user + 1]]

    def rows(self, users) -> np.ndarray:
        """Dense binary signals for ``users``, shape (n, len(users))."""
        return self._csr[np.asarray(users)].toarray().T

    def row(self, user: int) -> np.ndarray:
        out = np.zeros(self.num_items)
        out[self.items_of(user)] = 1.0
        return out

    def to_dense(self) -> np.ndarray:
        return self._csr.toarray()

    def factors(self, gamma: float) -> tuple[sp.csr_matrix, sp.csr_matrix]:
        """Cached ``(D_I^-g R^T D_U^-1, R D_I^(g-1))``; see :func:`normalized_interaction`."""
        gamma = float(gamma)
        if gamma not in self._factors:
            self._factors[gamma] = normalized_interaction(self, gamma)
        return self._factors[gamma]

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(np.asarray(self.shape, dtype="<i8").tobytes())
        h.update(self._csr.indptr.astype("<i8").tobytes())
        h.update(self._csr.indices.astype("<i8").tobytes())
        return h.hexdigest()

    def __repr__(self) -> str:
        return f"InteractionMatrix(m={self.num_users}, n={self.num_items}, nnz={self.nnz})"


def normalized_interaction(R: InteractionMatrix, gamma: float) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Sparse factors whose product is the order-``gamma`` normalized item Gram.

    Returns ``left = D_I^-gamma R^T D_U^-1`` (n x m) and
    ``right = R D_I^(gamma-1)`` (m x n). Zero-degree rows/columns get weight 0.
    """
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    du_inv = _inverse_power(R.user_degrees, 1.0)
    di_left = _inverse_power(R.item_degrees, gamma)
    di_right = _inverse_power(R.item_degrees, 1.0 - gamma)
    left = (sp.diags(di_left) @ R.csr_t @ sp.diags(du_inv)).tocsr()
    right = (R.csr @ sp.diags(di_right)).tocsr()
    return left, right


@dataclass
class Dataset:
    train: InteractionMatrix
    test: list[np.ndarray]
    name: str = "dataset"
    source_hashes: dict[str, str] = field(default_factory=dict)

    @property
    def num_users(self) -> int:
        return self.train.num_users

    @property
    def num_items(self) -> int:
        return self.train.num_items

    def test_users(self) -> np.ndarray:
        return np.array([u for u, items in enumerate(self.test) if len(items)], dtype=np.int64)

    def content_hash(self) -> str:
        h = hashlib.sha256(self.train.content_hash().encode())
        for items in self.test:
            h.update(np.asarray(items, dtype="<i8").tobytes())
            h.update(b"|")
        return h.hexdigest()


def git_blob_hash(path: str | Path) -> str:
    """Content hash computed the way ``git hash-object`` does."""
    data = Path(path).read_bytes()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def _read_adjacency(path: Path) -> list[tuple[int, list[int]]]:
    rows = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            tokens = line.split()
            if not tokens:
                continue
            try:
                ids = [int(t) for t in tokens]
            except ValueError:
                bad = next(t for t in tokens if not t.lstrip("-").isdigit())
                raise DatasetFormatError(f"{path}:{lineno}: malformed token {bad!r}") from None
            if any(i < 0 for i in ids):
                raise DatasetFormatError(f"{path}:{lineno}: negative id")
            if len(ids) < 2:
                continue
            rows.append((ids[0], ids[1:]))
    return rows


def load_dataset(train_path: str | Path, test_path: str | Path, name: str | None = None) -> Dataset:
    """Load LightGCN-style adjacency-list files (``user item item ...`` per line)."""
    train_path, test_path = Path(train_path), Path(test_path)
    train_rows = _read_adjacency(train_path)
    test_rows = _read_adjacency(test_path)
    if not train_rows:
        raise DatasetFormatError(f"{train_path}: no interactions")

    all_rows = train_rows + test_rows
    max_user = max(u for u, _ in all_rows)
    max_item = max(max(items) for _, items in all_rows)
    num_lines = len(all_rows)
    if max(max_user, max_item) > MAX_ID_PER_LINE * num_lines:
        raise DatasetFormatError(
            f"max id {max(max_user, max_item)} exceeds {MAX_ID_PER_LINE}x line count "
            f"{num_lines}; ids must be dense indices"
        )
    m, n = max_user + 1, max_item + 1

    users = np.concatenate([np.full(len(items), u) for u, items in train_rows])
    items = np.concatenate([np.asarray(items) for _, items in train_rows])
    train = InteractionMatrix.from_pairs(users, items, m, n)

    cold = int(np.sum(train.user_degrees == 0))
    if cold:
        log.warning("%d users have no train interactions; excluded from training and evaluation", cold)

    test_sets: list[set[int]] = [set() for _ in range(m)]
    for u, its in test_rows:
        test_sets[u].update(its)
    test: list[np.ndarray] = []
    overlap = 0
    for u, s in enumerate(test_sets):
        arr = np.array(sorted(s), dtype=np.int64)
        if len(arr) and train.user_degrees[u]:
            keep = ~np.isin(arr, train.items_of(u))
            overlap += int(np.sum(~keep))
            arr = arr[keep]
        test.append(arr)
    if overlap:
        log.warning("dropped %d test interactions already present in train", overlap)

    return Dataset(
        train=train,
        test=test,
        name=name or train_path.parent.name or "dataset",
        source_hashes={"train": git_blob_hash(train_path), "test": git_blob_hash(test_path)},
    )


def write_adjacency(path: str | Path, rows: dict[int, np.ndarray] | list[np.ndarray]) -> None:
    """Write per-user item lists in the same text format ``load_dataset`` reads."""
    items = rows.items() if isinstance(rows, dict) else enumerate(rows)
    with Path(path).open("w", encoding="utf-8") as fh:
        for u, its in items:
            if len(its):
                fh.write(" ".join(str(int(x)) for x in [u, *its]) + "\n")

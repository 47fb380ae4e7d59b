"""JSON checkpoints of trained kernels."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .basis import PolyBasis
from .filters import CompositeFilter, PolynomialKernel
from .lowpass import LowPassProjector

CHECKPOINT_VERSION = 1


@dataclass
class Checkpoint:
    basis: PolyBasis
    order: int
    gammas: tuple[float, ...]
    theta: np.ndarray
    omega: float
    svd_cutoff: int
    svd_seed: int
    dataset_hash: str

    def kernel(self) -> PolynomialKernel:
        return PolynomialKernel(self.basis, self.order, self.gammas, self.theta)

    def to_filter(self, projector: LowPassProjector | None) -> CompositeFilter:
        return CompositeFilter(self.kernel(), projector, self.omega if projector is not None else 0.0)

    @classmethod
    def from_filter(cls, f: CompositeFilter, svd_cutoff: int, svd_seed: int, dataset_hash: str) -> "Checkpoint":
        k = f.kernel
        return cls(k.basis, k.order, k.gammas, k.theta, f.omega, svd_cutoff, svd_seed, dataset_hash)

    def to_json(self) -> str:
        doc = {
            "version": CHECKPOINT_VERSION,
            "basis": self.basis.family.value,
            "jacobi_a": self.basis.jacobi_a,
            "jacobi_b": self.basis.jacobi_b,
            "K": self.order,
            "gammas": list(self.gammas),
            "theta": [[float(v) for v in row] for row in self.theta],
            "omega": self.omega,
            "svd_cutoff": self.svd_cutoff,
            "svd_seed": self.svd_seed,
            "dataset_hash": self.dataset_hash,
        }
        return json.dumps(doc, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "Checkpoint":
        doc = json.loads(text)
        if doc.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {doc.get('version')!r}")
        basis = PolyBasis(doc["basis"], doc.get("jacobi_a", 1.0), doc.get("jacobi_b", 1.0))
        return cls(
            basis=basis,
            order=int(doc["K"]),
            gammas=tuple(float(g) for g in doc["gammas"]),
            theta=np.array(doc["theta"], dtype=np.float64).reshape(len(doc["gammas"]), int(doc["K"]) + 1),
            omega=float(doc["omega"]),
            svd_cutoff=int(doc["svd_cutoff"]),
            svd_seed=int(doc["svd_seed"]),
            dataset_hash=str(doc["dataset_hash"]),
        )


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    Path(path).write_text(ckpt.to_json(), encoding="utf-8")


def load_checkpoint(path: str | Path) -> Checkpoint:
    return Checkpoint.from_json(Path(path).read_text(encoding="utf-8"))

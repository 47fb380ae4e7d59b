"""Flat ``key = value`` run configuration."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields
from pathlib import Path

from .basis import PolyBasis
from .training import FilterSpec, TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    dataset: str = ""
    data_dir: str = "data"
    train_path: str = ""
    test_path: str = ""
    basis: str = "monomial"
    jacobi_a: float = 1.0
    jacobi_b: float = 1.0
    K: int = 5
    gammas: tuple = (0.3, 0.4, 0.5, 0.6)
    s: int = 256
    omega: float = 0.3
    svd_seed: int = 0
    epochs: int = 50
    lr: float = 1e-3
    batch_users: int = 1024
    negatives: int = 1
    noise_eps: float = 0.1
    dropout: float = 0.2
    seed: int = 0
    val_fraction: float = 0.0
    k: int = 20
    variant: str = "full"
    output_dir: str = "runs/default"
    cache_dir: str = ""
    fast: bool = False

    # keys that locate outputs rather than change results
    _UNHASHED = ("output_dir", "cache_dir", "fast")

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def field_type(cls, key: str):
        return {f.name: f.type for f in fields(cls)}[key]

    def set(self, key: str, raw) -> None:
        if key not in self.keys():
            raise ConfigError(f"unknown config key {key!r}")
        setattr(self, key, _coerce(self.field_type(key), raw, key))

    def update_from_file(self, path: str | Path) -> None:
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (p.strip() for p in line.split("=", 1))
            try:
                self.set(key, value)
            except ConfigError as exc:
                raise ConfigError(f"{path}:{lineno}: {exc}") from None

    def dumps(self) -> str:
        return "".join(f"{k} = {_format(getattr(self, k))}\n" for k in self.keys())

    def content_hash(self) -> str:
        text = "".join(
            f"{k} = {_format(getattr(self, k))}\n" for k in self.keys() if k not in self._UNHASHED
        )
        return hashlib.sha256(text.encode()).hexdigest()

    def resolve_paths(self) -> tuple[Path, Path, str]:
        if self.train_path and self.test_path:
            train = Path(self.train_path)
            return train, Path(self.test_path), self.dataset or train.parent.name
        if not self.dataset:
            raise ConfigError("set either dataset or both train_path and test_path")
        base = Path(self.dataset)
        if not (base / "train.txt").exists():
            base = Path(self.data_dir) / self.dataset
        return base / "train.txt", base / "test.txt", Path(self.dataset).name

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.lr,
            epochs=self.epochs,
            batch_users=self.batch_users,
            noise_eps=self.noise_eps,
            kernel_dropout=self.dropout,
            negatives_per_positive=self.negatives,
            rng_seed=self.seed,
            workers=1 if not self.fast else 4,
            eval_k=self.k,
        )

    def filter_spec(self) -> FilterSpec:
        return FilterSpec(
            basis=PolyBasis(self.basis, self.jacobi_a, self.jacobi_b),
            order=self.K,
            gammas=tuple(self.gammas),
            omega=self.omega,
            cutoff=self.s,
            svd_seed=self.svd_seed,
        )


def _coerce(kind, raw, key):
    if not isinstance(raw, str):
        return raw
    try:
        if kind in ("bool", bool):
            low = raw.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if kind in ("int", int):
            return int(raw)
        if kind in ("float", float):
            return float(raw)
        if kind in ("tuple", tuple):
            return tuple(float(v) for v in raw.replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for {key}") from None
    return raw


def _format(value) -> str:
    if isinstance(value, tuple):
        return ",".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value).lower() if isinstance(value, bool) else str(value)

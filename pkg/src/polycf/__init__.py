"""Trainable polynomial spectral filters over generalized-normalized item Gram
operators, with an ideal low-pass projector, for implicit-feedback ranking."""

from .basis import Family, PolyBasis, basis_values
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .evaluation import EvalResult, evaluate, ndcg_at_k, recall_at_k, score_user, top_k
from .filters import (
    CompositeFilter,
    GramOperator,
    PolynomialKernel,
    apply_composite,
    apply_gram,
    basis_signals,
    response_curve,
)
from .interactions import Dataset, InteractionMatrix, load_dataset, normalized_interaction
from .lowpass import LowPassProjector, apply_low_pass, truncated_svd
from .training import FilterSpec, TrainConfig, train

__version__ = "0.1.0"

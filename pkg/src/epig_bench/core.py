"""Shared tensor, dataset and result types.

All information quantities in this package are measured in nats.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

NORMALIZATION_TOL = 1e-6


class ShapeError(ValueError):
    pass


class NormalizationError(ValueError):
    pass


class NonFiniteError(ValueError):
    pass


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PredictiveSamples:
    """Categorical predictions of S posterior samples on N inputs, shape [S, N, C].

    ``weights`` holds per-sample posterior weights (length S, summing to 1).
    ``None`` means the samples are equally weighted, which is the case for
    ensembles; exact discrete models carry their posterior here.
    """

    probs: np.ndarray
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        if probs.ndim != 3:
            raise ShapeError(f"expected [S, N, C] array, got shape {probs.shape}")
        if not np.all(np.isfinite(probs)):
            raise NonFiniteError("predictive samples contain NaN or Inf")
        if probs.size and probs.min() < 0:
            raise NormalizationError("negative probability")
        if probs.size:
            dev = np.abs(probs.sum(axis=-1) - 1.0)
            if dev.max() > NORMALIZATION_TOL:
                raise NormalizationError(
                    f"probability rows must sum to 1 (max deviation {dev.max():.3g})"
                )
            if dev.max() > 1e-12:  # leave already-normalized input bit-identical
                probs = probs / probs.sum(axis=-1, keepdims=True)
        object.__setattr__(self, "probs", _readonly(probs))
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=np.float64)
            if w.shape != (probs.shape[0],):
                raise ShapeError(f"weights must have shape ({probs.shape[0]},), got {w.shape}")
            if not np.all(np.isfinite(w)) or w.min() < 0:
                raise NonFiniteError("weights must be finite and non-negative")
            if abs(w.sum() - 1.0) > NORMALIZATION_TOL:
                raise NormalizationError("weights must sum to 1")
            object.__setattr__(self, "weights", _readonly(w / w.sum()))

    @property
    def S(self) -> int:
        return self.probs.shape[0]

    @property
    def N(self) -> int:
        return self.probs.shape[1]

    @property
    def C(self) -> int:
        return self.probs.shape[2]

    def sample_weights(self) -> np.ndarray:
        if self.weights is None:
            return np.full(self.S, 1.0 / self.S)
        return self.weights

    def mean(self) -> np.ndarray:
        """Posterior predictive p(y | x), shape [N, C]."""
        return np.einsum("s,snc->nc", self.sample_weights(), self.probs)


def validate_predictive(ps) -> None:
    """Raise unless ``ps`` (a PredictiveSamples or raw [S, N, C] array) is valid."""
    probs = np.asarray(getattr(ps, "probs", ps), dtype=np.float64)
    if probs.ndim != 3:
        raise ShapeError(f"expected [S, N, C] array, got shape {probs.shape}")
    S, N, C = probs.shape
    if S < 1 or N < 1:
        raise ShapeError(f"zero extent in shape {probs.shape}")
    if C < 2:
        raise ShapeError(f"need at least 2 classes, got {C}")
    if not np.all(np.isfinite(probs)):
        raise NonFiniteError("predictive samples contain NaN or Inf")
    if probs.min() < 0:
        raise NormalizationError("negative probability")
    dev = np.abs(probs.sum(axis=-1) - 1.0).max()
    if dev > NORMALIZATION_TOL:
        raise NormalizationError(f"row sums deviate from 1 by {dev:.3g}")


def slice_candidates(ps: PredictiveSamples, indices: Sequence[int]) -> PredictiveSamples:
    idx = np.asarray(list(indices), dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= ps.N):
        raise IndexError(f"candidate index out of range 0..{ps.N - 1}")
    if len(np.unique(idx)) != len(idx):
        raise ValueError("duplicate candidate index")
    return PredictiveSamples(ps.probs[:, idx, :], ps.weights)


Target = Union[int, np.ndarray]


@dataclass(frozen=True, eq=False)
class LabeledExample:
    x: np.ndarray
    target: Target
    is_ood: bool = False

    def __post_init__(self):
        object.__setattr__(self, "x", _readonly(np.ravel(self.x)))
        if not isinstance(self.target, (int, np.integer)):
            t = np.asarray(self.target, dtype=np.float64)
            if t.ndim != 1 or t.min() < 0 or abs(t.sum() - 1.0) > NORMALIZATION_TOL:
                raise NormalizationError("soft target must be a probability vector")
            object.__setattr__(self, "target", _readonly(t))
        else:
            object.__setattr__(self, "target", int(self.target))

    @property
    def is_soft(self) -> bool:
        return not isinstance(self.target, int)

    def target_vector(self, n_classes: int) -> np.ndarray:
        if self.is_soft:
            return np.asarray(self.target)
        v = np.zeros(n_classes)
        v[self.target] = 1.0
        return v


def stack_examples(data: Sequence[LabeledExample], n_classes: int) -> tuple[np.ndarray, np.ndarray]:
    """Features [N, D] and one-hot/soft targets [N, C]."""
    if not data:
        return np.zeros((0, 0)), np.zeros((0, n_classes))
    dims = {len(e.x) for e in data}
    if len(dims) != 1:
        raise ShapeError(f"inconsistent feature dimensions {sorted(dims)}")
    X = np.stack([e.x for e in data])
    T = np.stack([e.target_vector(n_classes) for e in data])
    return X, T


@dataclass(frozen=True)
class ExperimentPools:
    """Train/pool/eval/test splits.

    Pool targets and OoD flags are kept here but acquisition code only ever
    receives ``pool_x``; labels are revealed through the simulator's oracle.
    """

    train: tuple
    pool: tuple
    eval_x: np.ndarray
    test: tuple

    @property
    def pool_x(self) -> np.ndarray:
        if not self.pool:
            return np.zeros((0, self.eval_x.shape[1] if self.eval_x.ndim == 2 else 0))
        return np.stack([e.x for e in self.pool])


@dataclass(frozen=True)
class AcquisitionResult:
    selected: tuple
    scores: np.ndarray
    method_tag: str
    decomposition: Optional[tuple] = None  # (bald_term, conditional_bald_term)
    batch_score: Optional[float] = None


@dataclass(frozen=True)
class RoundRecord:
    round: int
    labeled: int
    accuracy: float
    ood_ratio: float
    wall_time: float
    selected: tuple = ()


@dataclass
class RunLog:
    method: str
    trial: int
    seed: int
    config_digest: str
    records: list = field(default_factory=list)
    error: Optional[str] = None

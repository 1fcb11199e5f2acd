"""Posterior realisations: MLP deep ensembles and an exact finite-hypothesis model."""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import logsumexp, softmax

from .core import DivergenceError, LabeledExample, PredictiveSamples, ShapeError, stack_examples
from .rng import derive_seed

# float32 training is ~3x faster at these layer sizes and still bit-deterministic
DTYPE = np.float32


@dataclass(frozen=True)
class TrainConfig:
    hidden: tuple = (64, 64)
    members: int = 8
    lr: float = 0.05
    momentum: float = 0.9
    epochs: int = 200
    batch_size: int = 64
    weight_decay: float = 1e-4
    n_classes: int = 2


@dataclass(eq=False)
class PosteriorEnsemble:
    """M independently seeded MLPs; parameters are stacked along axis 0.

    ``weights[l]`` has shape [M, fan_in, fan_out], ``biases[l]`` [M, fan_out].
    """

    weights: list
    biases: list
    config: TrainConfig
    seed: int = 0
    final_loss: float = float("nan")

    @property
    def n_members(self) -> int:
        return self.weights[0].shape[0]

    @property
    def layer_sizes(self) -> list:
        return [self.weights[0].shape[1]] + [w.shape[2] for w in self.weights]

    def logits(self, X: np.ndarray) -> np.ndarray:
        """[M, N, C] logits; X is [N, D] (shared) or [M, N, D] (per member)."""
        h = X if X.ndim == 3 else np.broadcast_to(X, (self.n_members,) + X.shape)
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.maximum(h @ W + b[:, None, :], 0.0)
        return h @ self.weights[-1] + self.biases[-1][:, None, :]

    def copy(self) -> "PosteriorEnsemble":
        return PosteriorEnsemble(
            [w.copy() for w in self.weights], [b.copy() for b in self.biases], self.config, self.seed, self.final_loss
        )


def _init_params(sizes: Sequence[int], member_seeds: Sequence[int]):
    weights = [np.empty((len(member_seeds), a, b), dtype=DTYPE) for a, b in zip(sizes[:-1], sizes[1:])]
    biases = [np.zeros((len(member_seeds), b), dtype=DTYPE) for b in sizes[1:]]
    for m, s in enumerate(member_seeds):
        rng = np.random.default_rng(s)
        for W in weights:
            W[m] = rng.normal(0.0, np.sqrt(2.0 / W.shape[1]), size=W.shape[1:])
    return weights, biases


def fit_ensemble(
    model: PosteriorEnsemble,
    X: np.ndarray,
    T: np.ndarray,
    seed: int,
    epochs: Optional[int] = None,
    sample_weight: Optional[np.ndarray] = None,
) -> PosteriorEnsemble:
    """Mini-batch SGD with momentum on mean cross-entropy to (soft) targets, in place.

    ``sample_weight`` scales each example's loss term (default 1).
    """
    cfg = model.config
    epochs = cfg.epochs if epochs is None else epochs
    X = np.asarray(X, dtype=DTYPE)
    T = np.asarray(T, dtype=DTYPE)
    sw = None if sample_weight is None else np.asarray(sample_weight, dtype=DTYPE)
    lr, mom, wd = DTYPE(cfg.lr), DTYPE(cfg.momentum), DTYPE(cfg.weight_decay)
    n = len(X)
    M = model.n_members
    params = model.weights + model.biases
    velocity = [np.zeros_like(p) for p in params]
    rngs = [np.random.default_rng(derive_seed(seed, "shuffle", m)) for m in range(M)]
    bs = min(cfg.batch_size, n)
    n_layers = len(model.weights)
    loss = np.nan
    for epoch in range(epochs):
        perms = np.stack([r.permutation(n) for r in rngs])
        epoch_loss = 0.0
        for start in range(0, n, bs):
            idx = perms[:, start : start + bs]
            xb, tb = X[idx], T[idx]  # [M, B, D], [M, B, C]
            B = idx.shape[1]
            acts = [xb]
            h = xb
            for W, b in zip(model.weights[:-1], model.biases[:-1]):
                h = np.maximum(h @ W + b[:, None, :], 0.0)
                acts.append(h)
            z = h @ model.weights[-1] + model.biases[-1][:, None, :]
            z = z - z.max(axis=-1, keepdims=True)
            ez = np.exp(z)
            se = ez.sum(axis=-1, keepdims=True)
            ce = -(tb * (z - np.log(se))).sum(axis=-1)
            delta = (ez / se - tb) / DTYPE(B)
            if sw is not None:
                ce = ce * sw[idx]
                delta *= sw[idx][..., None]
            epoch_loss += float(ce.sum()) / M
            gW = [None] * n_layers
            gb = [None] * n_layers
            for layer in range(n_layers - 1, -1, -1):
                gW[layer] = acts[layer].transpose(0, 2, 1) @ delta + wd * model.weights[layer]
                gb[layer] = delta.sum(axis=1)
                if layer:
                    delta = (delta @ model.weights[layer].transpose(0, 2, 1)) * (acts[layer] > 0)
            for p, v, g in zip(params, velocity, gW + gb):
                v *= mom
                v -= lr * g
                p += v
        loss = epoch_loss / n
        if not np.isfinite(loss):
            raise DivergenceError(f"non-finite training loss at epoch {epoch} (seed {seed}, config {cfg})")
    model.final_loss = float(loss)
    return model


def new_ensemble(n_features: int, config: TrainConfig, seed: int) -> PosteriorEnsemble:
    sizes = [n_features, *config.hidden, config.n_classes]
    member_seeds = [derive_seed(seed, "init", m) for m in range(config.members)]
    weights, biases = _init_params(sizes, member_seeds)
    return PosteriorEnsemble(weights, biases, config, seed)


def train_ensemble(data: Sequence[LabeledExample], config: TrainConfig, seed: int) -> PosteriorEnsemble:
    if not data:
        raise ValueError("cannot train on an empty dataset")
    X, T = stack_examples(data, config.n_classes)
    return train_arrays(X, T, config, seed)


def train_arrays(X: np.ndarray, T: np.ndarray, config: TrainConfig, seed: int) -> PosteriorEnsemble:
    model = new_ensemble(X.shape[1], config, seed)
    return fit_ensemble(model, X, T, seed)


def predict_samples(model: PosteriorEnsemble, X) -> PredictiveSamples:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        X = X.reshape(len(X), -1)
    if len(X) == 0:
        return PredictiveSamples(np.zeros((model.n_members, 0, model.config.n_classes)))
    if X.shape[1] != model.layer_sizes[0]:
        raise ShapeError(f"model expects {model.layer_sizes[0]} features, got {X.shape[1]}")
    return PredictiveSamples(softmax(model.logits(X.astype(DTYPE)).astype(np.float64), axis=-1))


_MAGIC = b"EPIGENS\0"
_VERSION = 1


def save_ensemble(model: PosteriorEnsemble, path) -> None:
    """Binary checkpoint: magic, u32 version, u32 header length, JSON header, float32 LE payload."""
    cfg = asdict(model.config)
    cfg["hidden"] = list(model.config.hidden)
    header = json.dumps(
        {"layer_sizes": model.layer_sizes, "members": model.n_members, "seed": model.seed,
         "final_loss": model.final_loss, "config": cfg},
        sort_keys=True,
    ).encode()
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<II", _VERSION, len(header)))
        f.write(header)
        for p in model.weights + model.biases:
            f.write(np.ascontiguousarray(p, dtype="<f4").tobytes())


def load_ensemble(path) -> PosteriorEnsemble:
    with open(path, "rb") as f:
        if f.read(8) != _MAGIC:
            raise ValueError(f"{path}: not an ensemble checkpoint")
        version, hlen = struct.unpack("<II", f.read(8))
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        header = json.loads(f.read(hlen))
        payload = f.read()
    cfg = header["config"]
    cfg["hidden"] = tuple(cfg["hidden"])
    sizes, M = header["layer_sizes"], header["members"]
    shapes = [(M, a, b) for a, b in zip(sizes[:-1], sizes[1:])] + [(M, b) for b in sizes[1:]]
    arrays, offset = [], 0
    for shape in shapes:
        count = int(np.prod(shape))
        arrays.append(np.frombuffer(payload, dtype="<f4", count=count, offset=offset).reshape(shape).astype(DTYPE))
        offset += 4 * count
    if offset != len(payload):
        raise ValueError(f"{path}: payload length does not match header")
    n = len(sizes) - 1
    return PosteriorEnsemble(arrays[:n], arrays[n:], TrainConfig(**cfg), header["seed"], header["final_loss"])


# ---------------------------------------------------------------------------
# exact discrete model


class DegenerateEvidenceError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class DiscreteBayesModel:
    """K hypotheses with exact log prior and log posterior weights.

    ``likelihood(X)`` returns the [K, N, C] table of p(y | x, w_k).
    """

    likelihood: Callable[[np.ndarray], np.ndarray]
    log_prior: np.ndarray
    log_posterior: np.ndarray = None

    def __post_init__(self):
        lp = np.asarray(self.log_prior, dtype=np.float64)
        lp = lp - logsumexp(lp)
        object.__setattr__(self, "log_prior", lp)
        post = lp if self.log_posterior is None else np.asarray(self.log_posterior, dtype=np.float64)
        object.__setattr__(self, "log_posterior", post - logsumexp(post))

    @property
    def K(self) -> int:
        return len(self.log_prior)

    @property
    def posterior(self) -> np.ndarray:
        return np.exp(self.log_posterior)


def tabular_model(table, prior=None) -> DiscreteBayesModel:
    """Hypotheses given as a [K, n_inputs, C] table; inputs are integer ids."""
    table = np.asarray(table, dtype=np.float64)
    K = table.shape[0]
    log_prior = np.zeros(K) if prior is None else np.log(np.asarray(prior, dtype=np.float64))

    def likelihood(X):
        return table[:, np.asarray(X, dtype=np.int64).reshape(-1), :]

    return DiscreteBayesModel(likelihood, log_prior)


def logistic_grid_model(weights, biases, prior=None) -> DiscreteBayesModel:
    """Binary logistic hypotheses p(y=1 | x, w) = sigmoid(w.x + b), one per row of ``weights``."""
    W = np.atleast_2d(np.asarray(weights, dtype=np.float64))
    b = np.asarray(biases, dtype=np.float64).reshape(-1)
    log_prior = np.zeros(len(W)) if prior is None else np.log(np.asarray(prior, dtype=np.float64))

    def likelihood(X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        z = X @ W.T + b  # [N, K]
        p1 = 1.0 / (1.0 + np.exp(-z.T))
        return np.stack([1.0 - p1, p1], axis=-1)

    return DiscreteBayesModel(likelihood, log_prior)


def discrete_condition(model: DiscreteBayesModel, X, y) -> DiscreteBayesModel:
    """Exact Bayes update on labels ``y`` (class indices or [N, C] soft targets) at inputs ``X``."""
    y = np.asarray(y)
    if len(y) == 0:
        return replace(model, log_posterior=model.log_posterior.copy())
    lik = model.likelihood(X)  # [K, N, C]
    with np.errstate(divide="ignore"):
        logl = np.log(lik)
    if y.ndim == 1:
        ll = logl[:, np.arange(len(y)), y.astype(np.int64)].sum(axis=1)
    else:
        ll = np.where(y[None] > 0, y[None] * logl, 0.0).sum(axis=(1, 2))
    unnorm = model.log_posterior + ll
    if not np.any(np.isfinite(unnorm)):
        raise DegenerateEvidenceError("every hypothesis assigns zero likelihood to the data")
    return replace(model, log_posterior=unnorm - logsumexp(unnorm))


def discrete_condition_examples(model: DiscreteBayesModel, data: Sequence[LabeledExample]) -> DiscreteBayesModel:
    if not data:
        return discrete_condition(model, np.zeros((0,)), np.zeros((0,), dtype=np.int64))
    X = np.stack([e.x for e in data])
    if any(e.is_soft for e in data):
        C = model.likelihood(X[:1]).shape[-1]
        y = np.stack([e.target_vector(C) for e in data])
    else:
        y = np.array([e.target for e in data])
    return discrete_condition(model, X if X.shape[1] > 1 else X[:, 0], y)


def discrete_predict(model: DiscreteBayesModel, X) -> PredictiveSamples:
    return PredictiveSamples(model.likelihood(X), weights=model.posterior)


def discrete_label_joint(model: DiscreteBayesModel, X, cap: int = 4096):
    from .kernels import joint_predictive

    ps = discrete_predict(model, X)
    return joint_predictive(ps, range(ps.N), mode="exact", cap=cap)

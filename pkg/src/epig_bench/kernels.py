"""Entropy, BALD and BatchBALD over predictive samples, plus batch selection."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import entr

from .core import AcquisitionResult, NonFiniteError, NormalizationError, PredictiveSamples

log = logging.getLogger(__name__)

EXACT_JOINT_CAP = 10**6
DEFAULT_MC_CONFIGS = 10_000


class JointCapExceeded(ValueError):
    pass


def entropy(p) -> float:
    """-sum p ln p with 0 ln 0 = 0."""
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or not np.all(np.isfinite(p)) or p.min() < 0 or abs(p.sum() - 1) > 1e-6:
        raise NormalizationError(f"not a probability vector: {p}")
    return float(entr(p).sum())


def _entropy_rows(p: np.ndarray) -> np.ndarray:
    return entr(p).sum(axis=-1)


def marginal_entropy(ps: PredictiveSamples) -> np.ndarray:
    """H[Y | x, D] of the posterior predictive, per input."""
    return _entropy_rows(ps.mean())


def expected_conditional_entropy(ps: PredictiveSamples) -> np.ndarray:
    """E_w H[Y | x, w], per input."""
    return ps.sample_weights() @ _entropy_rows(ps.probs)


def bald_scores(ps: PredictiveSamples) -> np.ndarray:
    return marginal_entropy(ps) - expected_conditional_entropy(ps)


@dataclass(frozen=True, eq=False)
class JointPredictive:
    """Joint predictive over labels of a batch.

    Exact tables list configurations in odometer order (last index fastest).
    MC estimates keep the distinct sampled configurations, their empirical
    weights, and the model's exact probability of each configuration.
    """

    batch_indices: tuple
    n_classes: int
    table: Optional[np.ndarray] = None
    configs: Optional[np.ndarray] = None
    weights: Optional[np.ndarray] = None
    config_probs: Optional[np.ndarray] = None
    n_samples: int = 0

    @property
    def exact(self) -> bool:
        return self.table is not None

    def as_dict(self) -> dict:
        if self.exact:
            shape = (self.n_classes,) * len(self.batch_indices)
            return {
                tuple(int(v) for v in np.unravel_index(i, shape)): float(p)
                for i, p in enumerate(self.table)
            }
        return {tuple(int(v) for v in c): float(w) for c, w in zip(self.configs, self.weights)}


def _per_sample_joint(probs: np.ndarray, batch: Sequence[int]) -> np.ndarray:
    """[S, C^b] table of prod_i p(y_i | x_i, w) per sample, odometer order."""
    S = probs.shape[0]
    table = np.ones((S, 1))
    for i in batch:
        table = (table[:, :, None] * probs[:, i, None, :]).reshape(S, -1)
    return table


def _config_probs(ps: PredictiveSamples, batch: Sequence[int], configs: np.ndarray) -> np.ndarray:
    per = np.ones((ps.S, len(configs)))
    for j, i in enumerate(batch):
        per *= ps.probs[:, i, configs[:, j]]
    return ps.sample_weights() @ per


def joint_predictive(
    ps: PredictiveSamples,
    batch: Sequence[int],
    mode: str = "exact",
    m: int = DEFAULT_MC_CONFIGS,
    seed: int = 0,
    cap: int = EXACT_JOINT_CAP,
) -> JointPredictive:
    """Joint predictive p(y_1..y_b | x_1..x_b, D) = E_w prod_i p(y_i | x_i, w).

    ``mode`` is ``"exact"``, ``"mc"`` or ``"auto"``; auto enumerates when
    C^b <= cap and otherwise falls back to ``m`` sampled configurations.
    """
    batch = tuple(int(i) for i in batch)
    if not batch:
        raise ValueError("empty batch")
    C = ps.C
    too_big = C ** len(batch) > cap
    if mode == "exact" and too_big:
        raise JointCapExceeded(f"C^b = {C}^{len(batch)} exceeds cap {cap}")
    if mode == "auto":
        if too_big:
            log.warning("joint over %d^%d configurations exceeds cap; using %d MC samples", C, len(batch), m)
        mode = "mc" if too_big else "exact"
    if mode == "exact":
        table = ps.sample_weights() @ _per_sample_joint(ps.probs, batch)
        return JointPredictive(batch, C, table=table)
    if mode != "mc":
        raise ValueError(f"unknown joint mode {mode!r}")
    if m < 1:
        raise ValueError("need m >= 1 MC configurations")
    rng = np.random.default_rng(seed)
    s = rng.choice(ps.S, size=m, p=ps.sample_weights())
    configs = np.empty((m, len(batch)), dtype=np.int64)
    for j, i in enumerate(batch):
        cdf = np.cumsum(ps.probs[s, i, :], axis=1)
        u = rng.random(m)[:, None]
        configs[:, j] = np.minimum((u > cdf).sum(axis=1), C - 1)
    uniq, counts = np.unique(configs, axis=0, return_counts=True)
    return JointPredictive(
        batch,
        C,
        configs=uniq,
        weights=counts / m,
        config_probs=_config_probs(ps, batch, uniq),
        n_samples=m,
    )


def joint_entropy(jp: JointPredictive) -> float:
    if jp.exact:
        return float(entr(jp.table).sum())
    return float(-(jp.weights * np.log(jp.config_probs)).sum())


def joint_entropy_stderr(jp: JointPredictive) -> float:
    """Standard error of the MC joint-entropy estimate (0 for exact tables)."""
    if jp.exact:
        return 0.0
    nll = -np.log(jp.config_probs)
    mu = (jp.weights * nll).sum()
    var = (jp.weights * (nll - mu) ** 2).sum() * jp.n_samples / max(jp.n_samples - 1, 1)
    return float(np.sqrt(var / jp.n_samples))


def batchbald_score(
    ps: PredictiveSamples,
    batch: Sequence[int],
    mode: str = "auto",
    m: int = DEFAULT_MC_CONFIGS,
    seed: int = 0,
    cap: int = EXACT_JOINT_CAP,
) -> float:
    """I[Y_1..Y_b; W | x_1..x_b, D] = H[joint] - sum_i E_w H[Y_i | x_i, w]."""
    batch = tuple(int(i) for i in batch)
    jp = joint_predictive(ps, batch, mode=mode, m=m, seed=seed, cap=cap)
    cond = expected_conditional_entropy(ps)[list(batch)].sum()
    return joint_entropy(jp) - float(cond)


def greedy_select(scorer: Callable[[tuple], float], N: int, b: int, method_tag: str = "greedy") -> AcquisitionResult:
    """Greedy maximisation of a set function, lowest index wins ties.

    ``scores`` in the result holds the marginal gain of each pick, in
    selection order; ``batch_score`` is the value of the whole batch.
    """
    if b < 1:
        raise ValueError("acquisition size must be >= 1")
    if b > N:
        raise ValueError(f"acquisition size {b} exceeds pool size {N}")
    selected: list[int] = []
    gains: list[float] = []
    current = 0.0
    for _ in range(b):
        best, best_val = -1, -np.inf
        for n in range(N):
            if n in selected:
                continue
            val = scorer(tuple(selected + [n]))
            if val > best_val:
                best, best_val = n, val
        selected.append(best)
        gains.append(best_val - current)
        current = best_val
    return AcquisitionResult(tuple(selected), np.array(gains), method_tag, batch_score=current)


def topk_select(scores, b: int, method_tag: str = "topk") -> AcquisitionResult:
    scores = np.asarray(scores, dtype=np.float64)
    if b > len(scores):
        raise ValueError(f"acquisition size {b} exceeds pool size {len(scores)}")
    order = np.argsort(-scores, kind="stable")[:b]
    return AcquisitionResult(tuple(int(i) for i in order), scores, method_tag)


def softmax_select(scores, b: int, temperature: float = 8.0, seed: int = 0, method_tag: str = "softmax") -> AcquisitionResult:
    """Sample ``b`` indices without replacement, P(i) proportional to exp(temperature * score_i).

    Implemented with the Gumbel-top-k trick, which is equivalent to sequential
    draws renormalised after each pick.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    if not np.all(np.isfinite(scores)):
        raise NonFiniteError("non-finite acquisition score")
    if b > len(scores):
        raise ValueError(f"acquisition size {b} exceeds pool size {len(scores)}")
    rng = np.random.default_rng(seed)
    keys = temperature * scores + rng.gumbel(size=len(scores))
    order = np.argsort(-keys, kind="stable")[:b]
    return AcquisitionResult(tuple(int(i) for i in order), scores, method_tag)


class _JointState:
    """Incremental per-sample joint over an already chosen batch."""

    def __init__(self, ps: PredictiveSamples, m: int, rng: np.random.Generator, cap: int):
        self.ps = ps
        self.w = ps.sample_weights()
        self.m = m
        self.rng = rng
        self.cap = cap
        self.table = np.ones((ps.S, 1))  # [S, K] per-sample probability of each tracked config
        self.mc = False
        self.cond = expected_conditional_entropy(ps)

    def candidate_joint_entropies(self, candidates: np.ndarray) -> np.ndarray:
        probs = self.ps.probs[:, candidates, :]  # [S, n, C]
        if not self.mc:
            joint = np.einsum("s,sk,snc->nkc", self.w, self.table, probs)
            return entr(joint).sum(axis=(1, 2))
        # configs were sampled from the joint, so weight by p(config_new) / p(config)
        base = self.w @ self.table  # [K]
        joint = np.einsum("s,sk,snc->nkc", self.w, self.table, probs)
        cond = joint / base[None, :, None]
        return -(cond * np.log(np.where(joint > 0, joint, 1.0))).sum(axis=2).mean(axis=1)

    def add(self, n: int):
        p = self.ps.probs[:, n, :]
        K = self.table.shape[1]
        if not self.mc and K * self.ps.C <= self.cap:
            self.table = (self.table[:, :, None] * p[:, None, :]).reshape(self.ps.S, -1)
            return
        if not self.mc:
            log.warning("joint table exceeds cap; switching to %d sampled configurations", self.m)
            base = self.w @ self.table
            idx = self.rng.choice(K, size=self.m, p=base / base.sum())
            self.table = self.table[:, idx]
            self.mc = True
        # extend each sampled configuration by one label drawn from its posterior
        post = self.w[:, None] * self.table  # [S, m]
        post /= post.sum(axis=0, keepdims=True)
        s = np.minimum((self.rng.random(self.m)[None, :] > np.cumsum(post, axis=0)).sum(axis=0), self.ps.S - 1)
        cdf = np.cumsum(p[s], axis=1)
        y = np.minimum((self.rng.random(self.m)[:, None] > cdf).sum(axis=1), self.ps.C - 1)
        self.table = self.table * p[:, y]


def batchbald_greedy(
    ps: PredictiveSamples,
    b: int,
    m: int = DEFAULT_MC_CONFIGS,
    seed: int = 0,
    cap: int = EXACT_JOINT_CAP,
    candidates: Optional[Sequence[int]] = None,
    method_tag: str = "batchbald",
) -> AcquisitionResult:
    """Greedy BatchBALD over the whole pool, vectorised over candidates.

    Selects the same batch as ``greedy_select`` with ``batchbald_score``
    while the joint stays under ``cap``.
    """
    selected, gains, total = batch_mi_greedy(ps, (), b, m=m, seed=seed, cap=cap, candidates=candidates)
    return AcquisitionResult(selected, np.array(gains), method_tag, batch_score=total)


def batch_mi_greedy(
    first: PredictiveSamples,
    subtract: Sequence[PredictiveSamples],
    b: int,
    m: int = DEFAULT_MC_CONFIGS,
    seed: int = 0,
    cap: int = EXACT_JOINT_CAP,
    candidates: Optional[Sequence[int]] = None,
):
    """Greedy on g(B) = BatchBALD_first(B) - mean_j BatchBALD_subtract[j](B).

    With no ``subtract`` tensors this is plain BatchBALD. Configuration
    samples (beyond the exact cap) are shared across candidates within a
    step. Returns (selected, per-step gains, g(selected)).
    """
    N = first.N
    if b < 1:
        raise ValueError("acquisition size must be >= 1")
    if b > N:
        raise ValueError(f"acquisition size {b} exceeds pool size {N}")
    rng = np.random.default_rng(seed)
    states = [_JointState(first, m, rng, cap)]
    for other in subtract:
        if other.probs.shape[1:] != first.probs.shape[1:]:
            raise ValueError("predictive tensors cover different inputs")
        states.append(_JointState(other, m, rng, cap))
    coef = [1.0] + ([-1.0 / len(subtract)] * len(subtract) if subtract else [])
    available = np.ones(N, dtype=bool)
    if candidates is not None:
        available[:] = False
        available[np.asarray(candidates, dtype=np.int64)] = True
    selected: list[int] = []
    gains: list[float] = []
    cond_sum = [0.0 for _ in states]
    current = 0.0
    for _ in range(b):
        cand = np.flatnonzero(available)
        if cand.size == 0:
            break
        values = np.zeros(cand.size)
        for k, st in enumerate(states):
            values += coef[k] * (st.candidate_joint_entropies(cand) - (cond_sum[k] + st.cond[cand]))
        j = int(np.argmax(values))
        n = int(cand[j])
        selected.append(n)
        gains.append(float(values[j]) - current)
        current = float(values[j])
        available[n] = False
        for k, st in enumerate(states):
            cond_sum[k] += st.cond[n]
            st.add(n)
    return tuple(selected), gains, current

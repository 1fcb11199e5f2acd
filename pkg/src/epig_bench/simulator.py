"""Closed-loop active learning with a contaminated pool."""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .config import METHODS, ExperimentConfig
from .core import ExperimentPools, LabeledExample, RoundRecord, RunLog, stack_examples
from .data import gen_synthetic, load_idx, ring_spec
from .epig import condition_posterior, epig_bald_terms, epig_entropy_scores, epig_greedy_batch
from .kernels import bald_scores, batchbald_greedy, softmax_select, topk_select
from .models import (
    DiscreteBayesModel,
    PosteriorEnsemble,
    discrete_condition_examples,
    predict_samples,
    train_arrays,
)
from .rng import derive_seed, make_rng

log = logging.getLogger(__name__)

EPIG_METHODS = ("epig_bald_topk", "epig_bald_greedy", "epig_entropy")


class InsufficientDataError(ValueError):
    pass


def synthetic_spec(config: ExperimentConfig):
    d = config.data
    return ring_spec(d.n_classes, d.clusters, d.radius, d.cluster_std, d.junk_low, d.junk_high)


def _load_sources(config: ExperimentConfig, n_id: int, n_ood: int, seed: int):
    d, o = config.data, config.ood
    if d.kind == "synthetic":
        spec = synthetic_spec(config)
        in_dist = gen_synthetic(spec, n_id, derive_seed(seed, "id-data"))
        junk_dim = spec
    else:
        in_dist = load_idx(d.idx_images, d.idx_labels)
        if len(in_dist) < n_id:
            raise InsufficientDataError(f"IDX dataset has {len(in_dist)} examples, need {n_id}")
        junk_dim = None
    if n_ood == 0:
        return in_dist, []
    uniform = np.full(d.n_classes, 1.0 / d.n_classes)
    if o.source == "junk":
        if junk_dim is not None:
            ood = gen_synthetic(junk_dim, 0, derive_seed(seed, "ood-data"), n_ood=n_ood)
        else:
            rng = make_rng(seed, "ood-data")
            dim = len(in_dist[0].x)
            ood = [LabeledExample(x, uniform, is_ood=True) for x in rng.random((n_ood, dim))]
    else:
        source = load_idx(o.idx_images, o.idx_labels)
        if len(source) < n_ood:
            raise InsufficientDataError(f"OoD IDX dataset has {len(source)} examples, need {n_ood}")
        pick = make_rng(seed, "ood-pick").permutation(len(source))[:n_ood]
        ood = [LabeledExample(source[i].x, uniform, is_ood=True) for i in pick]
    return in_dist, ood


def build_pools(config: ExperimentConfig, seed: int) -> ExperimentPools:
    """Split in-distribution data into train/pool/eval/test and mix junk into the pool.

    The number of OoD pool items is exactly round(contamination * pool_size).
    Depends only on the data/ood/experiment sizes and ``seed``, never on the
    acquisition method, so paired runs see identical pools.
    """
    e = config.experiment
    n_ood = int(round(config.ood.contamination * e.pool_size))
    n_pool_id = e.pool_size - n_ood
    n_id = e.initial_train + n_pool_id + e.eval_size + e.test_size
    in_dist, ood = _load_sources(config, n_id, n_ood, seed)
    if len(in_dist) < n_id:
        raise InsufficientDataError(f"need {n_id} in-distribution examples, have {len(in_dist)}")
    rng = make_rng(seed, "split")
    order = rng.permutation(len(in_dist))
    labels = np.array([in_dist[i].target for i in order])
    # initial train: round-robin over classes so every class is seen when possible
    train_idx: list = []
    by_class = {c: list(order[labels == c]) for c in sorted(set(labels.tolist()))}
    while len(train_idx) < e.initial_train:
        for c in by_class:
            if by_class[c] and len(train_idx) < e.initial_train:
                train_idx.append(by_class[c].pop(0))
    taken = set(train_idx)
    rest = [i for i in order if i not in taken]
    pool_id = rest[:n_pool_id]
    eval_idx = rest[n_pool_id : n_pool_id + e.eval_size]
    test_idx = rest[n_pool_id + e.eval_size : n_pool_id + e.eval_size + e.test_size]
    pool = [in_dist[i] for i in pool_id] + list(ood)
    pool = [pool[i] for i in rng.permutation(len(pool))]
    dim = len(in_dist[0].x)
    eval_x = np.stack([in_dist[i].x for i in eval_idx]) if eval_idx else np.zeros((0, dim))
    return ExperimentPools(
        train=tuple(in_dist[i] for i in train_idx),
        pool=tuple(pool),
        eval_x=eval_x,
        test=tuple(in_dist[i] for i in test_idx),
    )


@dataclass(frozen=True)
class OracleResponse:
    index: int
    outcome: str  # "label" | "uniform" | "rejected"
    example: Optional[LabeledExample]
    is_ood: bool


class Oracle:
    """Holds the hidden pool labels and reveals them one query at a time."""

    def __init__(self, pool: Sequence[LabeledExample], mode: str, n_classes: int):
        self._pool = pool
        self.mode = mode
        self.n_classes = n_classes

    def query(self, index: int) -> OracleResponse:
        ex = self._pool[index]
        if not ex.is_ood:
            return OracleResponse(index, "label", ex, False)
        if self.mode == "rejection":
            return OracleResponse(index, "rejected", None, True)
        uniform = np.full(self.n_classes, 1.0 / self.n_classes)
        return OracleResponse(index, "uniform", LabeledExample(ex.x, uniform, is_ood=True), True)


def select_batch(
    method: str,
    teacher: PosteriorEnsemble,
    pool_x: np.ndarray,
    b: int,
    config: ExperimentConfig,
    seed: int,
    train: Sequence[LabeledExample] = (),
    eval_x: Optional[np.ndarray] = None,
) -> list:
    """Positions (into ``pool_x``) chosen by ``method``.

    Only features and model outputs are visible here; pool labels and OoD
    flags never reach this function.
    """
    if method not in METHODS:
        raise ValueError(f"unknown acquisition method {method!r}")
    b = min(b, len(pool_x))
    g = config.epig
    if method == "uniform":
        return [int(i) for i in make_rng(seed, "uniform").choice(len(pool_x), size=b, replace=False)]
    preds = predict_samples(teacher, pool_x)
    if method == "bald_topk":
        return list(topk_select(bald_scores(preds), b).selected)
    if method == "batchbald":
        return list(batchbald_greedy(preds, b, m=g.mc_configs, seed=derive_seed(seed, "batchbald")).selected)
    if method == "softmax_bald":
        return list(softmax_select(bald_scores(preds), b, g.softmax_temperature, derive_seed(seed, "softmax")).selected)
    if method in EPIG_METHODS:
        pools = ExperimentPools(tuple(train), (), np.asarray(eval_x), ())
        cond_cfg = config.condition_config()
        conditioned = condition_posterior(teacher, pools, cond_cfg, derive_seed(seed, "condition"))
        cond_preds = conditioned.predict(pool_x)
        ref = conditioned.predict_reference(pool_x)
        if ref is not None:
            preds = ref
        if method == "epig_entropy":
            return list(topk_select(epig_entropy_scores(preds, cond_preds), b).selected)
        mode = "topk" if method == "epig_bald_topk" else "greedy_joint"
        res = epig_greedy_batch(preds, cond_preds, b, mode=mode, m=g.mc_configs, seed=derive_seed(seed, "joint"))
        return list(res.selected)
    raise ValueError(f"unknown acquisition method {method!r}")


def evaluate_accuracy(model: PosteriorEnsemble, test: Sequence[LabeledExample], n_classes: int) -> float:
    X, T = stack_examples(test, n_classes)
    pred = predict_samples(model, X).mean().argmax(axis=1)
    return float(np.mean(pred == T.argmax(axis=1)))


def run_trial(config: ExperimentConfig, method: str, trial: int) -> RunLog:
    e = config.experiment
    C = config.data.n_classes
    tcfg = config.train_config()
    base = e.seed
    trial_seed = derive_seed(base, "trial", trial)
    run = RunLog(method, trial, trial_seed, config.digest)
    try:
        pools = build_pools(config, trial_seed)
        oracle = Oracle(pools.pool, e.ood_mode, C)
        pool_x = pools.pool_x
        remaining = list(range(len(pools.pool)))
        train = list(pools.train)

        def fit(round_idx):
            X, T = stack_examples(train, C)
            return train_arrays(X, T, tcfg, derive_seed(base, trial, round_idx, "teacher"))

        t0 = time.perf_counter()
        teacher = fit(0)
        run.records.append(
            RoundRecord(0, len(train), evaluate_accuracy(teacher, pools.test, C), 0.0, time.perf_counter() - t0)
        )
        acquired = ood_acquired = 0
        for r in range(1, e.rounds + 1):
            t0 = time.perf_counter()
            if not remaining:
                break
            budget = min(e.acquisition_size, len(remaining))
            picked: list = []
            while budget > 0 and remaining:
                positions = select_batch(
                    method, teacher, pool_x[remaining], budget, config,
                    derive_seed(base, trial, r, "select", len(picked)), train, pools.eval_x,
                )
                chosen = [remaining[p] for p in positions]
                for idx in chosen:
                    resp = oracle.query(idx)
                    acquired += 1
                    ood_acquired += resp.is_ood
                    if resp.outcome != "rejected":
                        train.append(resp.example)
                        budget -= 1
                    elif e.rejection_consumes_budget:
                        budget -= 1
                picked.extend(chosen)
                chosen_set = set(chosen)
                remaining = [i for i in remaining if i not in chosen_set]
            teacher = fit(r)
            acc = evaluate_accuracy(teacher, pools.test, C)
            run.records.append(
                RoundRecord(r, len(train), acc, ood_acquired / acquired, time.perf_counter() - t0, tuple(picked))
            )
            log.info("%s trial %d round %d: labeled=%d acc=%.4f ood=%.3f", method, trial, r, len(train), acc,
                     ood_acquired / acquired)
    except Exception as exc:  # recorded so the remaining trials still run
        log.error("%s trial %d aborted: %s", method, trial, exc)
        run.error = f"{type(exc).__name__}: {exc}"
    return run


def _run_trial_args(args):
    return run_trial(*args)


def resolve_threads(threads: Optional[int] = None) -> int:
    if threads is None:
        threads = int(os.environ.get("EPIG_BENCH_THREADS", "1") or 1)
    return max(1, threads)


def run_experiment(config: ExperimentConfig, threads: Optional[int] = None) -> list:
    """One RunLog per (method, trial), ordered by method then trial."""
    jobs = [(config, m, t) for m in config.experiment.methods for t in range(config.experiment.trials)]
    threads = resolve_threads(threads)
    if threads == 1 or len(jobs) == 1:
        return [run_trial(*job) for job in jobs]
    with ProcessPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(_run_trial_args, jobs))


def final_summary(logs: Sequence[RunLog]) -> dict:
    """method -> (median final accuracy, median final ood ratio)."""
    out = {}
    for method in dict.fromkeys(l.method for l in logs):
        finals = [l.records[-1] for l in logs if l.method == method and l.records]
        if not finals:
            out[method] = (float("nan"), float("nan"))
            continue
        out[method] = (
            float(np.median([f.accuracy for f in finals])),
            float(np.median([f.ood_ratio for f in finals])),
        )
    return out


def ablate_eval_size(config: ExperimentConfig, sizes: Sequence[int], threads: Optional[int] = None) -> dict:
    """eval size -> (logs, summary). Seeds are shared across sizes for paired comparison."""
    out = {}
    for size in sizes:
        cfg = config.with_updates(experiment={"eval_size": int(size)})
        logs = run_experiment(cfg, threads)
        out[int(size)] = (logs, final_summary(logs))
    return out


def score_map(config: ExperimentConfig, grid: np.ndarray, seed: Optional[int] = None,
              model: Optional[DiscreteBayesModel] = None) -> dict:
    """BALD and EPIG-BALD over 2D grid points, plus the data used.

    With ``model`` given, scores come from that exact discrete model
    conditioned on the initial train split (EPIG-BALD enumerated exactly);
    otherwise an ensemble teacher and a distilled student are trained.
    """
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 2 or grid.shape[1] != 2:
        raise ValueError(f"score map needs 2D features, got grid of shape {grid.shape}")
    seed = config.experiment.seed if seed is None else seed
    pools = build_pools(config, derive_seed(seed, "trial", 0))
    if pools.eval_x.shape[1] != 2:
        raise ValueError("score map needs a 2D dataset")
    if model is not None:
        from .epig import exact_conditional_bald

        post = discrete_condition_examples(model, pools.train)
        bald, cond = exact_conditional_bald(post, pools.eval_x, grid)
        return {"grid": grid, "bald": bald, "epig_bald": bald - cond, "train": pools.train, "eval_x": pools.eval_x}
    X, T = stack_examples(pools.train, config.data.n_classes)
    teacher = train_arrays(X, T, config.train_config(), derive_seed(seed, "map", "teacher"))
    cond_cfg = config.condition_config()
    conditioned = condition_posterior(teacher, pools, cond_cfg, derive_seed(seed, "map", "condition"))
    preds = predict_samples(teacher, grid)
    ref = conditioned.predict_reference(grid)
    bald, cond = epig_bald_terms(preds if ref is None else ref, conditioned.predict(grid))
    return {"grid": grid, "bald": bald, "epig_bald": bald - cond, "train": pools.train, "eval_x": pools.eval_x}

"""EPIG and EPIG-BALD scoring.

EPIG-BALD of a candidate is the teacher's BALD minus the BALD of a posterior
that has additionally been conditioned on (pseudo-)labels for the evaluation
set.  The conditioned posterior is approximated either by self-distillation
(one student ensemble fit to the teacher's predictive on the evaluation set)
or by an ensemble of students, each fit to one jointly sampled pseudo-label
set.  On the exact discrete model all forms of EPIG can be enumerated.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy.special import entr

from .core import AcquisitionResult, ExperimentPools, PredictiveSamples, stack_examples
from .kernels import (
    JointCapExceeded,
    bald_scores,
    batch_mi_greedy,
    batchbald_score,
    joint_entropy,
    joint_predictive,
    marginal_entropy,
    topk_select,
)
from .models import (
    DiscreteBayesModel,
    PosteriorEnsemble,
    TrainConfig,
    discrete_condition,
    discrete_predict,
    fit_ensemble,
    new_ensemble,
    predict_samples,
    train_arrays,
)
from .rng import derive_seed

EXACT_ENUMERATION_CAP = 4096


@dataclass(frozen=True)
class PseudoLabelSet:
    labels: np.ndarray
    source_sample: int
    seed: int


@dataclass(frozen=True, eq=False)
class ConditionedPosterior:
    kind: str  # "distilled" | "pseudo_ensemble"
    members: tuple
    reference: Optional[PosteriorEnsemble] = None

    def predict(self, X) -> list:
        return [predict_samples(m, X) for m in self.members]

    def predict_reference(self, X) -> Optional[PredictiveSamples]:
        return None if self.reference is None else predict_samples(self.reference, X)


def sample_pseudo_label_sets(eval_preds: PredictiveSamples, J: int, seed: int) -> list:
    """Draw J joint labelings of the evaluation set.

    Each set first picks one posterior sample, then labels every evaluation
    input from that sample's predictive, so labels stay jointly consistent.
    """
    if J < 1:
        raise ValueError("need J >= 1 pseudo-label sets")
    rng = np.random.default_rng(seed)
    w = eval_preds.sample_weights()
    out = []
    for _ in range(J):
        s = int(rng.choice(eval_preds.S, p=w))
        cdf = np.cumsum(eval_preds.probs[s], axis=1)
        u = rng.random(eval_preds.N)[:, None]
        labels = np.minimum((u > cdf).sum(axis=1), eval_preds.C - 1)
        out.append(PseudoLabelSet(labels, s, seed))
    return out


@dataclass(frozen=True)
class ConditionConfig:
    kind: str = "distilled"
    pseudo_sets: int = 4
    eval_weight: float = 1.0  # per-example weight of eval-set terms relative to train terms
    warm_start: bool = True
    epochs: int = 100
    matched_reference: bool = True


def condition_posterior(
    teacher: PosteriorEnsemble,
    pools: ExperimentPools,
    config: ConditionConfig = ConditionConfig(),
    seed: int = 0,
) -> ConditionedPosterior:
    """Approximate p(w | y_eval, x_eval, D_train).

    distilled: one student ensemble trained on the train set (cross-entropy)
    plus the evaluation inputs with the teacher's mean predictive as soft
    targets (cross-entropy to a soft target is the KL loss up to a constant).
    pseudo_ensemble: one student per jointly sampled pseudo-label set.

    With ``warm_start`` each student member starts from the matching teacher
    member and is fine-tuned for ``config.epochs``; otherwise students are
    trained from a fresh initialisation with the teacher's recipe.
    With ``matched_reference`` (warm start only) a control copy of the teacher
    is fine-tuned on the same batches with the evaluation terms weighted 0;
    scoring against it instead of the raw teacher cancels the drift that the
    extra epochs cause away from the data.
    An empty evaluation set yields a fresh retrain of the teacher recipe.
    """
    tcfg: TrainConfig = teacher.config
    X_train, T_train = stack_examples(pools.train, tcfg.n_classes)
    X_eval = np.asarray(pools.eval_x, dtype=np.float64)
    if len(X_eval) == 0:
        student = train_arrays(X_train, T_train, tcfg, derive_seed(seed, "student", "empty-eval"))
        return ConditionedPosterior(config.kind, (student,))

    X = np.concatenate([X_train, X_eval])
    sw = np.concatenate([np.ones(len(X_train)), np.full(len(X_eval), config.eval_weight)])

    def fit(T_eval, tag, weights=sw):
        T = np.concatenate([T_train, T_eval])
        s = derive_seed(seed, "student", tag)
        if config.warm_start:
            return fit_ensemble(teacher.copy(), X, T, s, epochs=config.epochs, sample_weight=weights)
        return fit_ensemble(new_ensemble(X.shape[1], tcfg, s), X, T, s, sample_weight=weights)

    eval_preds = predict_samples(teacher, X_eval)
    if config.kind not in ("distilled", "pseudo_ensemble"):
        raise ValueError(f"unknown conditioning kind {config.kind!r}")
    reference = None
    if config.warm_start and config.matched_reference:
        # same shuffles as the first student, eval rows present but weightless
        tag = "distilled" if config.kind == "distilled" else "pseudo0"
        control_w = np.concatenate([np.ones(len(X_train)), np.zeros(len(X_eval))])
        reference = fit(eval_preds.mean(), tag, control_w)
    if config.kind == "distilled":
        return ConditionedPosterior("distilled", (fit(eval_preds.mean(), "distilled"),), reference)
    sets = sample_pseudo_label_sets(eval_preds, config.pseudo_sets, derive_seed(seed, "pseudo"))
    eye = np.eye(tcfg.n_classes)
    students = tuple(fit(eye[ps.labels], f"pseudo{j}") for j, ps in enumerate(sets))
    return ConditionedPosterior("pseudo_ensemble", students, reference)


def _as_list(conditioned) -> list:
    if isinstance(conditioned, PredictiveSamples):
        return [conditioned]
    out = list(conditioned)
    if not out:
        raise ValueError("need at least one conditioned predictive tensor")
    return out


def _check_shapes(teacher_preds: PredictiveSamples, conditioned: list):
    for c in conditioned:
        if c.N != teacher_preds.N or c.C != teacher_preds.C:
            raise ValueError(
                f"shape mismatch: teacher covers {teacher_preds.N}x{teacher_preds.C}, conditioned {c.N}x{c.C}"
            )


def epig_bald_terms(teacher_preds: PredictiveSamples, conditioned_preds) -> tuple:
    """(teacher BALD, mean conditioned BALD) per candidate."""
    conditioned = _as_list(conditioned_preds)
    _check_shapes(teacher_preds, conditioned)
    cond = np.mean([bald_scores(c) for c in conditioned], axis=0)
    return bald_scores(teacher_preds), cond


def epig_bald_scores(teacher_preds: PredictiveSamples, conditioned_preds) -> np.ndarray:
    bald, cond = epig_bald_terms(teacher_preds, conditioned_preds)
    return bald - cond


def epig_entropy_scores(teacher_preds: PredictiveSamples, conditioned_preds) -> np.ndarray:
    """H[Y | x, D] minus the mean predictive entropy of the conditioned models."""
    conditioned = _as_list(conditioned_preds)
    _check_shapes(teacher_preds, conditioned)
    return marginal_entropy(teacher_preds) - np.mean([marginal_entropy(c) for c in conditioned], axis=0)


def eval_entropy_gap(eval_preds: PredictiveSamples, m: int = 10_000, seed: int = 0) -> float:
    """Sum of per-point eval entropies minus their joint entropy.

    The summed form upper-bounds the joint one and is loose when eval points
    are redundant; this reports how loose. Reported only, never asserted.
    """
    jp = joint_predictive(eval_preds, range(eval_preds.N), mode="auto", m=m, seed=seed)
    return float(marginal_entropy(eval_preds).sum() - joint_entropy(jp))


def epig_greedy_batch(
    teacher_preds: PredictiveSamples,
    conditioned_preds,
    b: int,
    mode: str = "topk",
    m: int = 10_000,
    seed: int = 0,
    method_tag: str = "epig_bald",
) -> AcquisitionResult:
    """Select a batch by EPIG-BALD.

    topk ranks single-candidate scores; greedy_joint greedily maximises
    BatchBALD_teacher(B) - mean_j BatchBALD_conditioned_j(B).
    """
    conditioned = _as_list(conditioned_preds)
    _check_shapes(teacher_preds, conditioned)
    if b > teacher_preds.N:
        raise ValueError(f"acquisition size {b} exceeds pool size {teacher_preds.N}")
    bald, cond = epig_bald_terms(teacher_preds, conditioned)
    scores = bald - cond
    if mode == "topk":
        res = topk_select(scores, b, method_tag)
        return replace(res, decomposition=(bald, cond))
    if mode == "greedy_joint":
        selected, gains, total = batch_mi_greedy(teacher_preds, conditioned, b, m=m, seed=seed)
        return AcquisitionResult(selected, np.array(gains), method_tag, decomposition=(bald, cond), batch_score=total)
    raise ValueError(f"unknown batch mode {mode!r}")


# ---------------------------------------------------------------------------
# exact forms on the discrete model


def _label_configs(C: int, n: int) -> np.ndarray:
    return np.array(list(itertools.product(range(C), repeat=n)), dtype=np.int64).reshape(-1, n)


def _per_hypothesis_joint(lik: np.ndarray) -> np.ndarray:
    """[K, C^n] of prod_i p(y_i | x_i, w_k) in odometer order."""
    K = lik.shape[0]
    table = np.ones((K, 1))
    for i in range(lik.shape[1]):
        table = (table[:, :, None] * lik[:, i, None, :]).reshape(K, -1)
    return table


def _H(p: np.ndarray) -> float:
    return float(entr(p).sum())


def exact_epig_all_forms(model: DiscreteBayesModel, eval_x, candidate_x, cap: int = EXACT_ENUMERATION_CAP):
    """I[Y_eval; Y_cand | x_eval, x_cand, D] computed three independent ways.

    (a) H[Y_eval] - E_{y_cand} H[Y_eval | y_cand]
    (b) H[Y_cand] - E_{y_eval} H[Y_cand | y_eval], Bayes-updating the model per y_eval
    (c) BatchBALD(cand) - E_{y_eval} BatchBALD(cand | y_eval)
    ``candidate_x`` is treated as one joint batch.
    """
    eval_x = np.asarray(eval_x)
    candidate_x = np.asarray(candidate_x)
    n_eval, n_cand = len(eval_x), len(candidate_x)
    if n_eval == 0 or n_cand == 0:
        return 0.0, 0.0, 0.0
    C = model.likelihood(candidate_x[:1]).shape[-1]
    if C**n_eval > cap or C**n_cand > cap:
        raise JointCapExceeded(f"label joint exceeds enumeration cap {cap}")
    w = model.posterior

    # (a): condition on candidate labels, look at the eval joint
    Pe = _per_hypothesis_joint(model.likelihood(eval_x))
    Pc = _per_hypothesis_joint(model.likelihood(candidate_x))
    h_eval = _H(w @ Pe)
    cond_a = 0.0
    for c in range(Pc.shape[1]):
        pc = float(w @ Pc[:, c])
        if pc <= 0:
            continue
        w_post = w * Pc[:, c] / pc
        cond_a += pc * _H(w_post @ Pe)
    form_a = h_eval - cond_a

    # (b) and (c): exact Bayes updates of the model on each eval labeling
    configs = _label_configs(C, n_eval)
    p_eval = discrete_label_joint_table(model, eval_x)
    cand_all = list(range(n_cand))
    ps = discrete_predict(model, candidate_x)
    h_cand = joint_entropy_exact(ps)
    bald_cand = batchbald_score(ps, cand_all, mode="exact", cap=cap)
    cond_h = 0.0
    cond_bald = 0.0
    for cfg, pe in zip(configs, p_eval):
        if pe <= 0:
            continue
        post = discrete_condition(model, eval_x, cfg)
        ps_post = discrete_predict(post, candidate_x)
        cond_h += pe * joint_entropy_exact(ps_post)
        cond_bald += pe * batchbald_score(ps_post, cand_all, mode="exact", cap=cap)
    return form_a, h_cand - cond_h, bald_cand - cond_bald


def joint_entropy_exact(ps: PredictiveSamples) -> float:
    jp = joint_predictive(ps, range(ps.N), mode="exact")
    return _H(jp.table)


def discrete_label_joint_table(model: DiscreteBayesModel, X) -> np.ndarray:
    return model.posterior @ _per_hypothesis_joint(model.likelihood(X))


def exact_conditional_bald(model: DiscreteBayesModel, eval_x, candidate_x) -> tuple:
    """(BALD, E_{y_eval} BALD | y_eval) of each single candidate, by enumeration."""
    eval_x = np.asarray(eval_x)
    ps = discrete_predict(model, candidate_x)
    bald = bald_scores(ps)
    if len(eval_x) == 0:
        return bald, bald.copy()
    C = ps.C
    cond = np.zeros_like(bald)
    for cfg, pe in zip(_label_configs(C, len(eval_x)), discrete_label_joint_table(model, eval_x)):
        if pe > 0:
            cond += pe * bald_scores(discrete_predict(discrete_condition(model, eval_x, cfg), candidate_x))
    return bald, cond

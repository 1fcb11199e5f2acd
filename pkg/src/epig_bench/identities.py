"""Enumeration-based checks of the information identities, shared by the CLI and tests."""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass

import numpy as np

from .core import PredictiveSamples
from .epig import exact_conditional_bald, exact_epig_all_forms
from .kernels import bald_scores, batchbald_score, greedy_select, joint_entropy, joint_entropy_stderr, joint_predictive
from .models import tabular_model
from .rng import make_rng

SLACK = 1e-9


@dataclass
class SuiteResult:
    name: str
    passed: bool
    detail: str
    seconds: float

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail} ({self.seconds:.2f}s)"


def random_discrete_instance(rng: np.random.Generator, max_k: int = 8, max_eval: int = 4, n_classes: int = 2,
                             n_candidates: int = 3):
    """Random tabular model over ``n_eval + n_candidates`` inputs.

    Returns (model, eval_ids, candidate_ids).  Likelihood rows and the prior
    are Dirichlet(1) draws; posteriors are the prior.
    """
    K = int(rng.integers(1, max_k + 1))
    n_eval = int(rng.integers(1, max_eval + 1))
    n_inputs = n_eval + n_candidates
    table = rng.dirichlet(np.ones(n_classes), size=(K, n_inputs))
    prior = rng.dirichlet(np.ones(K))
    model = tabular_model(table, prior)
    return model, np.arange(n_eval), np.arange(n_eval, n_inputs)


def random_predictive(rng: np.random.Generator, S: int, N: int, C: int) -> PredictiveSamples:
    return PredictiveSamples(rng.dirichlet(np.ones(C), size=(S, N)))


def epig_forms_suite(instances: int = 200, seed: int = 0) -> tuple:
    """Max pairwise deviation among the three exact EPIG forms; also records the
    conditioning inequality E[conditional BALD] <= BALD per candidate."""
    t0 = time.perf_counter()
    rng = make_rng(seed, "epig-forms")
    worst_dev = 0.0
    worst_ineq = -np.inf
    min_value = np.inf
    for _ in range(instances):
        model, ev, cands = random_discrete_instance(rng)
        # one joint batch of all candidates and each candidate alone
        for batch in [cands] + [cands[i : i + 1] for i in range(len(cands))]:
            a, b, c = exact_epig_all_forms(model, ev, batch)
            worst_dev = max(worst_dev, abs(a - b), abs(a - c), abs(b - c))
            min_value = min(min_value, a, b, c)
        bald, cond = exact_conditional_bald(model, ev, cands)
        worst_ineq = max(worst_ineq, float(np.max(cond - bald)))
    dt = time.perf_counter() - t0
    forms = SuiteResult(
        "epig-forms", worst_dev < SLACK and min_value >= -SLACK,
        f"{instances} instances, max pairwise deviation {worst_dev:.3g}, min value {min_value:.3g}", dt,
    )
    ineq = SuiteResult(
        "conditioning-inequality", worst_ineq <= SLACK,
        f"max E[conditional BALD] - BALD = {worst_ineq:.3g}", dt,
    )
    return forms, ineq


def _diminishing_returns(value: dict, n: int) -> float:
    """Largest violation gain(B, x) - gain(A, x) over A subset of B, x not in B."""
    worst = -np.inf
    full = range(n)
    for B in value:
        Bs = set(B)
        for x in full:
            if x in Bs:
                continue
            gain_b = value[tuple(sorted(Bs | {x}))] - value[B]
            for r in range(len(B) + 1):
                for A in itertools.combinations(B, r):
                    gain_a = value[tuple(sorted(set(A) | {x}))] - value[A]
                    worst = max(worst, gain_b - gain_a)
    return worst


def _all_subsets(n: int):
    for r in range(n + 1):
        yield from itertools.combinations(range(n), r)


def submodularity_suite(instances: int = 100, seed: int = 0) -> tuple:
    t0 = time.perf_counter()
    rng = make_rng(seed, "submodularity")
    worst_bb = -np.inf
    worst_monotone = np.inf
    for _ in range(instances):
        S, C, N = int(rng.integers(1, 5)), int(rng.integers(2, 4)), int(rng.integers(2, 7))
        ps = random_predictive(rng, S, N, C)
        value = {B: (batchbald_score(ps, B, mode="exact") if B else 0.0) for B in _all_subsets(N)}
        worst_bb = max(worst_bb, _diminishing_returns(value, N))
        for B in value:
            for x in range(N):
                if x not in B:
                    worst_monotone = min(worst_monotone, value[tuple(sorted(B + (x,)))] - value[B])
    bb = SuiteResult(
        "batchbald-submodular", worst_bb <= SLACK and worst_monotone >= -SLACK,
        f"{instances} instances, max diminishing-returns violation {worst_bb:.3g}, min gain {worst_monotone:.3g}",
        time.perf_counter() - t0,
    )
    t0 = time.perf_counter()
    worst_epig = -np.inf
    violating = 0
    for _ in range(instances):
        K = int(rng.integers(1, 7))
        n_eval, N = int(rng.integers(1, 4)), int(rng.integers(2, 6))
        table = rng.dirichlet(np.ones(2), size=(K, n_eval + N))
        model = tabular_model(table, rng.dirichlet(np.ones(K)))
        ev = np.arange(n_eval)
        value = {
            B: (exact_epig_all_forms(model, ev, n_eval + np.array(B))[0] if B else 0.0) for B in _all_subsets(N)
        }
        v = _diminishing_returns(value, N)
        worst_epig = max(worst_epig, v)
        violating += v > SLACK
    epig = SuiteResult(
        "epig-submodular", worst_epig <= SLACK,
        f"{instances} instances, {violating} with violations, max violation {worst_epig:.3g}",
        time.perf_counter() - t0,
    )
    return bb, epig


def greedy_bound_suite(instances: int = 100, seed: int = 0, pool: int = 8, b: int = 3) -> SuiteResult:
    t0 = time.perf_counter()
    rng = make_rng(seed, "greedy-bound")
    bound = 1 - 1 / math.e
    worst_ratio = np.inf
    for _ in range(instances):
        S, C = int(rng.integers(2, 5)), int(rng.integers(2, 4))
        ps = random_predictive(rng, S, pool, C)
        scorer = lambda B: batchbald_score(ps, B, mode="exact")  # noqa: E731
        greedy = greedy_select(scorer, pool, b).batch_score
        best = max(scorer(B) for B in itertools.combinations(range(pool), b))
        worst_ratio = min(worst_ratio, greedy / best if best > 0 else 1.0)
    return SuiteResult(
        "greedy-bound", worst_ratio >= bound,
        f"{instances} instances, min greedy/optimum {worst_ratio:.6f} (bound {bound:.6f})",
        time.perf_counter() - t0,
    )


def redundancy_suite() -> SuiteResult:
    t0 = time.perf_counter()
    ps = duplicated_disagreement()
    pair = batchbald_score(ps, [0, 1], mode="exact")
    topk_sum = float(bald_scores(ps)[[0, 1]].sum())
    ok = abs(pair - math.log(2)) <= SLACK and abs(topk_sum - 2 * math.log(2)) <= SLACK
    return SuiteResult(
        "batchbald-redundancy", ok, f"BatchBALD(pair) = {pair:.12f}, top-k BALD sum = {topk_sum:.12f}",
        time.perf_counter() - t0,
    )


def duplicated_disagreement() -> PredictiveSamples:
    """Two samples that disagree maximally, observed at two identical inputs."""
    return PredictiveSamples(np.array([[[1.0, 0.0], [1.0, 0.0]], [[0.0, 1.0], [0.0, 1.0]]]))


def mc_joint_fixtures(seed: int = 0) -> list:
    rng = make_rng(seed, "mc-fixtures")
    fixtures = []
    for C in range(2, 9):
        b = 1
        while C**b <= 64:
            S = int(rng.integers(2, 6))
            fixtures.append(random_predictive(rng, S, b, C))
            b += 1
    return fixtures


def mc_joint_entropy_suite(m: int = 10_000, seed: int = 0) -> SuiteResult:
    t0 = time.perf_counter()
    worst = 0.0
    fixtures = mc_joint_fixtures(seed)
    for k, ps in enumerate(fixtures):
        batch = range(ps.N)
        exact = joint_entropy(joint_predictive(ps, batch, mode="exact"))
        jp = joint_predictive(ps, batch, mode="mc", m=m, seed=seed + k)
        se = joint_entropy_stderr(jp)
        z = abs(joint_entropy(jp) - exact) / se if se > 0 else (0.0 if joint_entropy(jp) == exact else np.inf)
        worst = max(worst, z)
    return SuiteResult(
        "mc-joint-entropy", worst <= 3.0, f"{len(fixtures)} fixtures, max |MC - exact| = {worst:.2f} SE",
        time.perf_counter() - t0,
    )


def run_all(instances: int = 200, seed: int = 0) -> list:
    forms, ineq = epig_forms_suite(instances, seed)
    sub_instances = max(1, instances // 2)
    bb, epig = submodularity_suite(sub_instances, seed)
    return [
        forms,
        ineq,
        bb,
        epig,
        greedy_bound_suite(sub_instances, seed),
        redundancy_suite(),
        mc_joint_entropy_suite(seed=seed),
    ]

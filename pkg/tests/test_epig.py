import numpy as np
import pytest

from epig_bench.core import ExperimentPools, LabeledExample, PredictiveSamples
from epig_bench.epig import (
    eval_entropy_gap,
    ConditionConfig,
    condition_posterior,
    epig_bald_scores,
    epig_entropy_scores,
    epig_greedy_batch,
    exact_conditional_bald,
    exact_epig_all_forms,
    sample_pseudo_label_sets,
)
from epig_bench.identities import random_discrete_instance
from epig_bench.kernels import JointCapExceeded, bald_scores
from epig_bench.models import TrainConfig, predict_samples, tabular_model, train_ensemble

from conftest import LN2, random_ps


def test_pseudo_labels_deterministic_teacher():
    probs = np.zeros((3, 4, 3))
    argmax = np.array([2, 0, 1, 1])
    probs[:, np.arange(4), argmax] = 1.0
    for s in sample_pseudo_label_sets(PredictiveSamples(probs), 5, seed=0):
        assert np.array_equal(s.labels, argmax)


def test_pseudo_labels_binomial_frequency():
    ps = PredictiveSamples(np.full((3, 1, 2), 0.5))
    sets = sample_pseudo_label_sets(ps, 10_000, seed=1)
    freq = np.mean([s.labels[0] for s in sets])
    assert abs(freq - 0.5) < 0.015


def test_pseudo_labels_are_jointly_consistent():
    # each sample predicts the same one-hot class at both inputs
    probs = np.array([[[1.0, 0.0], [1.0, 0.0]], [[0.0, 1.0], [0.0, 1.0]]])
    sets = sample_pseudo_label_sets(PredictiveSamples(probs), 200, seed=2)
    assert all(s.labels[0] == s.labels[1] == s.source_sample for s in sets)
    assert len(sample_pseudo_label_sets(PredictiveSamples(probs), 1, seed=2)) == 1
    assert sample_pseudo_label_sets(PredictiveSamples(probs), 1, seed=2)[0].labels.shape == (2,)


def test_epig_bald_trivial_cases(rng):
    ps = random_ps(rng, 4, 6, 3)
    assert np.array_equal(epig_bald_scores(ps, ps), np.zeros(6))
    assert np.array_equal(epig_entropy_scores(ps, [ps, ps]), np.zeros(6))
    certain = PredictiveSamples(np.tile(np.eye(3)[[0, 1, 2, 0, 1, 2]][None], (2, 1, 1)))
    assert np.allclose(epig_bald_scores(ps, certain), bald_scores(ps))
    with pytest.raises(ValueError):
        epig_bald_scores(ps, random_ps(rng, 4, 5, 3))


def test_epig_entropy_uniform_vs_onehot():
    teacher = PredictiveSamples(np.array([[[0.5, 0.5]], [[0.5, 0.5]]]))
    student = PredictiveSamples(np.array([[[1.0, 0.0]], [[1.0, 0.0]]]))
    assert epig_entropy_scores(teacher, student)[0] == pytest.approx(LN2, abs=1e-12)


def test_two_hypothesis_separating_eval_point():
    # input 0 is the eval point, input 1 the candidate; both hypotheses are deterministic
    model = tabular_model(np.array([[[1.0, 0.0], [1.0, 0.0]], [[0.0, 1.0], [0.0, 1.0]]]))
    bald, cond = exact_conditional_bald(model, [0], [1])
    assert bald[0] == pytest.approx(LN2, abs=1e-12)
    assert cond[0] == pytest.approx(0.0, abs=1e-12)
    forms = exact_epig_all_forms(model, [0], [1])
    assert np.allclose(forms, LN2, atol=1e-12)


def test_exact_forms_empty():
    model = tabular_model(np.array([[[0.4, 0.6]], [[0.7, 0.3]]]))
    assert exact_epig_all_forms(model, [], [0]) == (0.0, 0.0, 0.0)


def test_exact_forms_cap():
    model = tabular_model(np.full((2, 14, 2), 0.5))
    with pytest.raises(JointCapExceeded):
        exact_epig_all_forms(model, np.arange(13), [13])


def test_exact_forms_agree_on_random_instances(rng):
    for _ in range(40):
        model, ev, cands = random_discrete_instance(rng)
        a, b, c = exact_epig_all_forms(model, ev, cands)
        assert abs(a - b) < 1e-9 and abs(a - c) < 1e-9 and a > -1e-9


def test_exact_epig_entropy_equals_epig_bald(rng):
    # with the exact Bayes update the two single-candidate estimators coincide
    for _ in range(20):
        model, ev, cands = random_discrete_instance(rng)
        bald, cond = exact_conditional_bald(model, ev, cands)
        for i, x in enumerate(cands):
            a, _, _ = exact_epig_all_forms(model, ev, [x])
            assert bald[i] - cond[i] == pytest.approx(a, abs=1e-9)


def test_eval_point_equal_to_candidate_never_hurts(rng):
    for _ in range(30):
        K = int(rng.integers(2, 7))
        table = rng.dirichlet(np.ones(2), size=(K, 4))
        model = tabular_model(table, rng.dirichlet(np.ones(K)))
        before = exact_epig_all_forms(model, [0, 1], [3])[0]
        after = exact_epig_all_forms(model, [0, 1, 3], [3])[0]
        assert after >= before - 1e-9


def test_greedy_batch_modes(rng):
    teacher = random_ps(rng, 4, 8, 2)
    cond = random_ps(rng, 4, 8, 2)
    scores = epig_bald_scores(teacher, cond)
    for mode in ("topk", "greedy_joint"):
        res = epig_greedy_batch(teacher, cond, 1, mode=mode)
        assert res.selected == (int(np.argmax(scores)),)
    res = epig_greedy_batch(teacher, cond, 3, mode="topk")
    bald, cbald = res.decomposition
    assert np.array_equal(res.scores, bald - cbald)
    with pytest.raises(ValueError):
        epig_greedy_batch(teacher, cond, 9)


def test_greedy_joint_skips_duplicate_copy():
    # inputs 0 and 1 are copies of a maximal-disagreement point; input 2 is an independent coin
    teacher = PredictiveSamples(np.array([
        [[1.0, 0.0], [1.0, 0.0], [1.0, 0.0]],
        [[0.0, 1.0], [0.0, 1.0], [0.0, 1.0]],
        [[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
        [[0.0, 1.0], [0.0, 1.0], [1.0, 0.0]],
    ]))
    zero = PredictiveSamples(np.tile(teacher.mean()[None], (2, 1, 1)))
    assert epig_greedy_batch(teacher, zero, 2, mode="topk").selected == (0, 1)
    assert epig_greedy_batch(teacher, zero, 2, mode="greedy_joint").selected == (0, 2)


def _tiny_pools(seed=0, n_eval=40):
    rng = np.random.default_rng(seed)
    y = np.arange(12) % 2
    X = rng.normal(size=(12, 2)) * 0.4 + np.where(y[:, None] == 1, 1.5, -1.5)
    train = tuple(LabeledExample(x, int(t)) for x, t in zip(X, y))
    eval_x = rng.normal(size=(n_eval, 2)) * 1.5
    return ExperimentPools(train, (), eval_x, ())


CFG = TrainConfig(hidden=(16,), members=4, epochs=80, n_classes=2)


def test_empty_eval_matches_fresh_retrain():
    # BALD from 4-8 members is too noisy for a 0.9 retrain-vs-retrain correlation
    wide = TrainConfig(hidden=(16,), members=64, epochs=80, n_classes=2)
    pools = _tiny_pools(n_eval=0)
    pools = ExperimentPools(pools.train, (), np.zeros((0, 2)), ())
    teacher = train_ensemble(pools.train, wide, seed=1)
    cond = condition_posterior(teacher, pools, ConditionConfig(), seed=5)
    assert len(cond.members) == 1
    other = train_ensemble(pools.train, wide, seed=77)
    grid = np.random.default_rng(3).uniform(-4, 4, size=(200, 2))
    a = bald_scores(cond.predict(grid)[0])
    b = bald_scores(predict_samples(other, grid))
    assert np.corrcoef(a, b)[0, 1] > 0.9


@pytest.mark.parametrize("kind", ["distilled", "pseudo_ensemble"])
def test_condition_posterior_shapes_and_determinism(kind):
    pools = _tiny_pools()
    teacher = train_ensemble(pools.train, CFG, seed=1)
    config = ConditionConfig(kind=kind, pseudo_sets=3, epochs=30)
    a = condition_posterior(teacher, pools, config, seed=2)
    b = condition_posterior(teacher, pools, config, seed=2)
    assert len(a.members) == (1 if kind == "distilled" else 3)
    assert a.reference is not None
    for pa, pb in zip(a.predict(pools.eval_x), b.predict(pools.eval_x)):
        assert np.array_equal(pa.probs, pb.probs)


def test_distillation_properties():
    pools = _tiny_pools()
    teacher = train_ensemble(pools.train, CFG, seed=1)
    cond = condition_posterior(teacher, pools, ConditionConfig(), seed=2)
    t = predict_samples(teacher, pools.eval_x)
    s = cond.predict(pools.eval_x)[0]
    kl = np.sum(t.mean() * (np.log(t.mean()) - np.log(s.mean())), axis=1).mean()
    assert kl < 0.05
    assert bald_scores(s).mean() < bald_scores(t).mean()


def test_exact_epig_is_not_submodular_xor():
    # hypotheses are two fair bits (a, b); the target is a xor b, candidates reveal a and b
    table = np.zeros((4, 3, 2))
    for k, (a, b) in enumerate([(0, 0), (0, 1), (1, 0), (1, 1)]):
        for i, v in enumerate([a ^ b, a, b]):
            table[k, i, v] = 1.0
    model = tabular_model(table)
    ev = np.array([0])
    alone = [exact_epig_all_forms(model, ev, np.array([i]))[0] for i in (1, 2)]
    pair = exact_epig_all_forms(model, ev, np.array([1, 2]))[0]
    assert alone == pytest.approx([0.0, 0.0], abs=1e-12)
    # gain of the second bit grows from 0 to ln 2 once the first is known
    assert pair == pytest.approx(LN2, abs=1e-12)


def test_eval_entropy_gap(disagreement, rng):
    # two copies of one point: summed entropy 2 ln 2, joint ln 2
    assert eval_entropy_gap(disagreement) == pytest.approx(LN2, abs=1e-12)
    ps = random_ps(rng, 4, 3, 2)
    assert eval_entropy_gap(ps) >= -1e-12
    independent = PredictiveSamples(ps.probs[:1])  # one sample: points independent
    assert eval_entropy_gap(independent) == pytest.approx(0.0, abs=1e-12)

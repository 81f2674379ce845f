import itertools
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mote.errors import EmptyScoreSet, SingleGroup
from mote.metrics import (
    ResolutionWarning, ScoreSet, auc_rank, fdr, gini, igarbe, pair_accuracy, per_group_rates,
    rates_at_threshold, roc_curve, symmetrize_groups, threshold_at_fmr,
)

# ---- brute-force oracles (plain python loops)


def bf_rates(gen, imp, tau):
    fm = sum(1 for s in imp if s >= tau)
    fnm = sum(1 for s in gen if s < tau)
    return fm / len(imp), fnm / len(gen)


def bf_threshold(imp, target):
    vals = sorted(set(imp))
    cands = [np.nextafter(vals[0], -np.inf)]
    cands += [a + (b - a) / 2 for a, b in zip(vals, vals[1:])]
    cands.append(np.nextafter(vals[-1], np.inf))
    for c in sorted(set(cands)):
        fm = sum(1 for s in imp if s >= c) / len(imp)
        if fm <= target:
            return c, fm


def bf_auc(gen, imp):
    won = 0.0
    for g in gen:
        for i in imp:
            won += 1.0 if g > i else 0.5 if g == i else 0.0
    return won / (len(gen) * len(imp))


def bf_accuracy(gen, imp, tau):
    ok = sum(1 for s in gen if s >= tau) + sum(1 for s in imp if s < tau)
    return ok / (len(gen) + len(imp))


def random_sets(n, seed=0):
    rng = np.random.default_rng(seed)
    for _ in range(n):
        ng, ni = rng.integers(1, 101, size=2)
        # coarse grid so that ties are common
        levels = rng.integers(2, 50)
        gen = np.round(rng.beta(3, 1.5, ng) * levels) / levels
        imp = np.round(rng.beta(1.5, 3, ni) * levels) / levels
        yield gen, imp, float(rng.choice(np.concatenate([gen, imp, rng.random(1)])))


def test_metrics_agree_with_brute_force():
    for gen, imp, tau in random_sets(1000):
        s = ScoreSet(gen, imp)
        assert rates_at_threshold(s, tau) == bf_rates(gen, imp, tau)
        assert pair_accuracy(s, tau) == bf_accuracy(gen, imp, tau)
        assert auc_rank(s) == bf_auc(gen, imp)
        for target in (0.0001, 0.01, 0.1, 0.37, 1.0):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", ResolutionWarning)
                assert threshold_at_fmr(s, target) == bf_threshold(imp, target)


# ---- worked examples


def test_rates_example():
    s = ScoreSet([0.9, 0.8], [0.1, 0.95])
    assert rates_at_threshold(s, 0.5) == (0.5, 0.0)
    assert rates_at_threshold(s, np.nextafter(0.95, 1))[0] == 0.0
    assert rates_at_threshold(s, 1e-300) == (1.0, 0.0)


def test_threshold_examples():
    imp = np.arange(1, 11) / 10
    tau, fm = threshold_at_fmr(ScoreSet([1.0], imp), 0.1)
    assert fm == 0.1 and 0.9 < tau <= 1.0
    tau, fm = threshold_at_fmr(ScoreSet([1.0], imp), 1.0)
    assert tau < 0.1 and fm == 1.0


def test_resolution_warning():
    imp = np.random.default_rng(0).random(500)
    with pytest.warns(ResolutionWarning):
        tau, fm = threshold_at_fmr(ScoreSet([1.0], imp), 1e-3)
    assert tau > imp.max() and fm == 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("error", ResolutionWarning)
        threshold_at_fmr(ScoreSet([1.0], np.random.default_rng(0).random(1000)), 1e-3)


def test_auc_examples():
    assert auc_rank(ScoreSet([0.9, 0.8], [0.1, 0.2])) == 1.0
    assert auc_rank(ScoreSet([0.3, 0.6, 0.6], [0.6, 0.3, 0.6])) == 0.5
    assert auc_rank(ScoreSet([0.9, 0.4], [0.6, 0.1])) == 0.75


def test_accuracy_examples():
    assert pair_accuracy(ScoreSet([0.9], [0.1]), 0.5) == 1.0
    assert pair_accuracy(ScoreSet([0.9], [0.8]), 0.85) == 1.0
    assert pair_accuracy(ScoreSet([0.9], [0.8]), 0.95) == 0.5


def test_fdr_examples():
    assert fdr({"F": (0.01, 0.2), "M": (0.01, 0.2)}) == 1.0
    assert fdr({"F": (0.001, 0.02), "M": (0.003, 0.05)}, 0.5) == pytest.approx(0.984, abs=1e-9)
    assert fdr({"F": (0.0, 0.0), "M": (1.0, 1.0)}) == pytest.approx(0.0, abs=1e-9)


def test_igarbe_examples():
    assert igarbe({"F": (0.2, 0.1), "M": (0.2, 0.1)}) == pytest.approx(1.0, abs=1e-9)
    assert gini([0.1, 0.3]) == pytest.approx(0.5, abs=1e-9)
    assert igarbe({"F": (0.1, 0.1), "M": (0.3, 0.3)}) == pytest.approx(0.5, abs=1e-9)
    assert igarbe({"F": (0.0, 0.0), "M": (0.0, 0.0)}) == 1.0


def test_gini_matches_mean_abs_difference_formula():
    rng = np.random.default_rng(0)
    for n in range(2, 8):
        x = rng.random(n)
        mad = np.mean([abs(a - b) for a in x for b in x])
        assert gini(x) == pytest.approx(n / (n - 1) * mad / (2 * x.mean()), rel=1e-12)


def test_errors():
    with pytest.raises(EmptyScoreSet):
        rates_at_threshold(ScoreSet([], [0.1]), 0.5)
    with pytest.raises(EmptyScoreSet):
        threshold_at_fmr(ScoreSet([0.1], []), 0.1)
    with pytest.raises(SingleGroup):
        fdr({"F": (0.1, 0.1)})
    with pytest.raises(SingleGroup):
        igarbe({"F": (0.1, 0.1)})
    with pytest.raises(ValueError):
        ScoreSet([np.nan], [0.1])


def test_roc_endpoints():
    roc = roc_curve(ScoreSet([0.9, 0.4], [0.6, 0.1]))
    assert roc[0] == (1.0, 0.0) and roc[-1] == (0.0, 1.0)
    fm = [p[0] for p in roc]
    assert fm == sorted(fm, reverse=True)


def test_per_group_and_symmetrize():
    s = ScoreSet([0.9, 0.2, 0.8], [0.1, 0.7, 0.3], ["F", "M", "M"], ["F", "F", "M"])
    r = per_group_rates(s, 0.5)
    assert r == {"F": (0.5, 0.0), "M": (0.0, 0.5)}
    sym = per_group_rates(symmetrize_groups(s), 0.5)
    assert sym["F"] == sym["M"] == rates_at_threshold(s, 0.5)
    assert fdr(sym) == 1.0 and igarbe(sym) == 1.0


# ---- properties

score_lists = st.lists(st.floats(0, 1, allow_nan=False), min_size=1, max_size=40)
# a grid keeps the transforms strictly increasing in floating point too
grid_lists = st.lists(st.integers(0, 1000).map(lambda k: k / 1000), min_size=1, max_size=40)


@settings(max_examples=200, deadline=None)
@given(grid_lists, grid_lists, st.sampled_from(["exp", "cube", "affine", "logit"]))
def test_auc_invariant_to_monotone_transform(gen, imp, kind):
    f = {"exp": np.exp, "cube": lambda x: x**3 + x, "affine": lambda x: 3 * x - 7,
         "logit": lambda x: np.log((x + 1) / (2 - x))}[kind]
    a = auc_rank(ScoreSet(gen, imp))
    b = auc_rank(ScoreSet(f(np.asarray(gen)), f(np.asarray(imp))))
    assert a == pytest.approx(b, abs=1e-12)


rates = st.tuples(st.floats(0, 1), st.floats(0, 1))


@settings(max_examples=200, deadline=None)
@given(st.lists(rates, min_size=2, max_size=6), st.floats(0, 1), st.randoms())
def test_fairness_bounded_and_permutation_invariant(rs, alpha, rnd):
    groups = {f"g{i}": r for i, r in enumerate(rs)}
    names = list(groups)
    rnd.shuffle(names)
    relabeled = {f"h{i}": groups[n] for i, n in enumerate(names)}
    for fn in (fdr, igarbe):
        v = fn(groups, alpha)
        assert -1e-12 <= v <= 1 + 1e-12
        assert fn(relabeled, alpha) == pytest.approx(v, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(score_lists, score_lists, st.floats(0, 1))
def test_rates_in_unit_interval(gen, imp, tau):
    s = ScoreSet(gen, imp)
    fm, fnm = rates_at_threshold(s, tau)
    assert 0 <= fm <= 1 and 0 <= fnm <= 1
    assert 0 <= pair_accuracy(s, tau) <= 1


@settings(max_examples=100, deadline=None)
@given(score_lists, st.floats(1e-3, 1))
def test_threshold_meets_target(imp, target):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ResolutionWarning)
        tau, fm = threshold_at_fmr(ScoreSet([0.5], imp), target)
    assert fm <= target
    assert rates_at_threshold(ScoreSet([0.5], imp), tau)[0] == fm


def test_fdr_equals_pairwise_max_gap():
    rng = np.random.default_rng(1)
    for _ in range(50):
        r = {f"g{i}": tuple(rng.random(2)) for i in range(4)}
        gap = lambda k: max(abs(a[k] - b[k]) for a, b in itertools.combinations(r.values(), 2))
        assert fdr(r, 0.3) == pytest.approx(1 - 0.3 * gap(0) - 0.7 * gap(1), abs=1e-12)

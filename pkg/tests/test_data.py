import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import binom

from mltr.data import (
    Dataset,
    EmptyEvalWarning,
    QueryGroup,
    SamplingStrategy,
    SparsityProfile,
    can_make_episode,
    make_finetune_split,
    make_meta_episode,
    make_synthetic_dataset,
    normalize_features,
    sample_pn,
    smote_augment,
    smote_oversample,
    split_by_query,
)
from mltr.errors import DataError, InsufficientItems, InsufficientPositives, InsufficientQueries


def tiny_dataset(n_queries, docs=4, dims=2):
    rng = np.random.default_rng(n_queries)
    return Dataset(
        [QueryGroup(f"q{i}", rng.random((docs, dims)), [1] + [0] * (docs - 1)) for i in range(n_queries)], dims
    )


def group(n_pos, n_neg, dims=3, seed=0):
    rng = np.random.default_rng(seed)
    labels = np.array([1] * n_pos + [0] * n_neg)
    rng.shuffle(labels)
    return QueryGroup("g", rng.random((labels.size, dims)), labels)


# domain types ----------------------------------------------------------------

def test_query_group_validation():
    with pytest.raises(DataError):
        QueryGroup("q", np.zeros((2, 3)), [1])
    with pytest.raises(DataError):
        QueryGroup("q", np.zeros((0, 3)), [])
    with pytest.raises(DataError):
        QueryGroup("q", np.zeros((1, 3)), [-1])
    with pytest.raises(DataError):
        Dataset([QueryGroup("a", np.zeros((1, 2)), [0]), QueryGroup("a", np.zeros((1, 2)), [1])], 2)


def test_profile_and_strategy_parsing():
    assert SparsityProfile.parse("p1n39") == SparsityProfile(1, 39)
    assert str(SparsityProfile(2, 8)) == "p2n8" and SparsityProfile(2, 8).k == 10
    for bad in ("p0n9", "n9", "p1n", "1n9"):
        with pytest.raises(ValueError):
            SparsityProfile.parse(bad)
    assert SamplingStrategy.parse("multiple_positive(3)") == SamplingStrategy("multiple_positive", 3)
    assert SamplingStrategy.parse("one_positive").step_profile(SparsityProfile(3, 7)) == SparsityProfile(1, 9)
    with pytest.raises(ValueError):
        SamplingStrategy.parse("multiple_positive(10)").step_profile(SparsityProfile(1, 9))
    with pytest.raises(ValueError):
        SamplingStrategy("weird")


def test_stats_counts_docids():
    ds = Dataset([QueryGroup("a", np.zeros((2, 1)), [0, 2], ["docid = X1", "docid = X2"]),
                  QueryGroup("b", np.zeros((1, 1)), [1], ["docid = X1 inc = 1"])], 1, "d")
    st_ = ds.stats()
    assert st_["queries"] == 2 and st_["items"] == 2 and st_["query_item_pairs"] == 3
    assert st_["positives_pct"] == pytest.approx(200 / 3)
    assert (st_["min_rating"], st_["max_rating"]) == (0, 2)


# splitting and normalisation ------------------------------------------------

@pytest.mark.parametrize("n,sizes", [(10, (8, 1, 1)), (784, (628, 78, 78)), (19, (17, 1, 1))])
def test_split_sizes(n, sizes):
    train, val, test = split_by_query(tiny_dataset(n, docs=2), (0.8, 0.1, 0.1), seed=0)
    assert (len(train), len(val), len(test)) == sizes


def test_split_partitions_and_is_seeded():
    ds = tiny_dataset(50)
    parts = split_by_query(ds, seed=3)
    ids = [set(p.query_ids) for p in parts]
    assert set.union(*ids) == set(ds.query_ids) and sum(map(len, ids)) == 50
    assert [p.query_ids for p in split_by_query(ds, seed=3)] == [p.query_ids for p in parts]
    assert [p.query_ids for p in split_by_query(ds, seed=4)] != [p.query_ids for p in parts]
    # each split keeps dataset order
    order = {q: i for i, q in enumerate(ds.query_ids)}
    for p in parts:
        assert [order[q] for q in p.query_ids] == sorted(order[q] for q in p.query_ids)


def test_split_errors():
    with pytest.raises(InsufficientQueries):
        split_by_query(tiny_dataset(5))
    with pytest.raises(ValueError):
        split_by_query(tiny_dataset(20), (0.5, 0.2, 0.2))


def test_normalization_bounds_and_constant_columns():
    X = np.array([[1.0, 5.0, 2.0], [3.0, 5.0, 4.0], [2.0, 5.0, 3.0]])
    ds = normalize_features(Dataset([QueryGroup("q", X, [1, 0, 0])], 3))
    Z = ds[0].features
    assert Z[:, 0].tolist() == [0.0, 1.0, 0.5]
    assert Z[:, 1].tolist() == [0.0, 0.0, 0.0]
    syn = normalize_features(make_synthetic_dataset(n_queries=5, seed=1))
    for q in syn:
        assert q.features.min() >= 0.0 and q.features.max() <= 1.0


# sampling ---------------------------------------------------------------------

def test_sample_pn_exact_counts(rng):
    g = group(6, 30)
    prof = SparsityProfile(2, 5)
    for _ in range(200):
        idx = sample_pn(g, prof, rng)
        assert len(set(idx.tolist())) == 7
        assert (g.labels[idx] > 0).sum() == 2 and (g.labels[idx] == 0).sum() == 5
        assert np.all(np.diff(idx) > 0)


def test_sample_pn_insufficient():
    with pytest.raises(InsufficientItems):
        sample_pn(group(1, 30), SparsityProfile(2, 5), np.random.default_rng(0))
    with pytest.raises(InsufficientItems):
        sample_pn(group(3, 4), SparsityProfile(1, 5), np.random.default_rng(0))


def test_sample_pn_uniform_frequencies():
    # each positive of 4 is picked with probability 1/4, each negative of 20 with 9/20
    g = group(4, 20, seed=1)
    rng = np.random.default_rng(99)
    draws = 10_000
    counts = np.zeros(g.n_docs)
    for _ in range(draws):
        counts[sample_pn(g, SparsityProfile(1, 9), rng)] += 1
    alpha = 1e-6 / g.n_docs  # family-wise bound over all items
    for d in range(g.n_docs):
        p = 1 / 4 if g.labels[d] > 0 else 9 / 20
        lo, hi = binom.ppf(alpha / 2, draws, p), binom.isf(alpha / 2, draws, p)
        assert lo <= counts[d] <= hi


@pytest.mark.parametrize("strategy", ["fixed", "one_positive", "multiple_positive(2)"])
def test_meta_episode_disjointness(strategy, rng):
    strat = SamplingStrategy.parse(strategy)
    prof = SparsityProfile(2, 6)
    g = group(5, 20)
    for _ in range(300):
        ep = make_meta_episode(g, prof, strat, 3, rng)
        step = strat.step_profile(prof)
        assert len(ep.train_sets) == 3
        for ts in ep.train_sets:
            assert (g.labels[ts] > 0).sum() == step.p and len(ts) == prof.k
        assert not set(ep.test_set.tolist()) & set(ep.train_items.tolist())
        assert (g.labels[ep.test_set] > 0).sum() == prof.p
        if strat.kind == "fixed":
            assert all(ts is ep.train_sets[0] for ts in ep.train_sets)


def test_episode_precondition():
    prof = SparsityProfile(1, 9)
    assert can_make_episode(group(2, 18), prof, SamplingStrategy())
    assert not can_make_episode(group(1, 40), prof, SamplingStrategy())
    with pytest.raises(InsufficientItems):
        make_meta_episode(group(1, 40), prof, SamplingStrategy(), 1, np.random.default_rng(0))


def test_finetune_split_coverage(rng):
    g = group(3, 15)
    for _ in range(200):
        tune, rest = make_finetune_split(g, SparsityProfile(1, 4), rng)
        assert len(tune) == 5 and not set(tune.tolist()) & set(rest.tolist())
        assert sorted(tune.tolist() + rest.tolist()) == list(range(g.n_docs))


def test_finetune_split_empty_eval_warns():
    g = group(1, 2)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        _, rest = make_finetune_split(g, SparsityProfile(1, 2), np.random.default_rng(0))
    assert rest.size == 0 and any(issubclass(w.category, EmptyEvalWarning) for w in caught)


@given(n_pos=st.integers(1, 6), n_neg=st.integers(1, 25), p=st.integers(1, 3), n=st.integers(1, 10), seed=st.integers(0, 2**31))
def test_sampler_property(n_pos, n_neg, p, n, seed):
    g = group(n_pos, n_neg, seed=seed % 1000)
    prof = SparsityProfile(p, n)
    rng = np.random.default_rng(seed)
    if n_pos < p or n_neg < n:
        with pytest.raises(InsufficientItems):
            sample_pn(g, prof, rng)
        return
    idx = sample_pn(g, prof, rng)
    assert (g.labels[idx] > 0).sum() == p and (g.labels[idx] == 0).sum() == n


# SMOTE ------------------------------------------------------------------------

def test_smote_points_lie_on_parent_segments(rng):
    P = rng.random((12, 5))
    out, base, nb, u = smote_oversample(P, 3, 500, rng, return_parents=True)
    assert out.shape == (500, 5)
    assert np.all(base != nb)
    for x, b, j in zip(out, base, nb):
        d = P[j] - P[b]
        t = np.dot(x - P[b], d) / np.dot(d, d)
        assert -1e-9 <= t <= 1 + 1e-9
        assert np.allclose(P[b] + t * d, x, atol=1e-9)


def test_smote_neighbours_are_nearest(rng):
    P = rng.random((15, 2))
    _, base, nb, _ = smote_oversample(P, 2, 300, rng, return_parents=True)
    dist = np.linalg.norm(P[:, None] - P[None], axis=2)
    np.fill_diagonal(dist, np.inf)
    for b, j in zip(base, nb):
        assert dist[b, j] <= np.sort(dist[b])[1] + 1e-12


def test_smote_errors_and_k_clamp(rng):
    with pytest.raises(InsufficientPositives):
        smote_oversample(np.ones((1, 3)), 5, 4, rng)
    out = smote_oversample(rng.random((3, 2)), 10, 7, rng)
    assert out.shape == (7, 2)


def test_smote_augment_counts(rng):
    ds = make_synthetic_dataset(n_queries=8, seed=2)
    n_pos = sum(q.positives.size for q in ds)
    aug = smote_augment(ds, 5, 0.5, rng)
    assert sum(q.positives.size for q in aug) == n_pos + round(0.5 * n_pos)
    assert sum(q.negatives.size for q in aug) == sum(q.negatives.size for q in ds)
    assert aug.query_ids == ds.query_ids
    assert smote_augment(ds, 5, 0.0, rng) is ds

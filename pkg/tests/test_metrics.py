import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mltr.data import Dataset, QueryGroup
from mltr.metrics import evaluate_model, ndcg_at_k, paired_t_test, rank_by_scores, t_sf_two_sided
from mltr.ranker import ParameterVector

import oracles


def test_ndcg_worked_example():
    dcg = 3.0 + 7.0 / math.log2(3)
    idcg = 7.0 + 3.0 / math.log2(3)
    assert dcg == pytest.approx(7.41650, abs=1e-5)  # quoted value is truncated, not rounded
    assert idcg == pytest.approx(8.89279, abs=5e-6)
    assert ndcg_at_k([2, 3], 2) == pytest.approx(0.83399, abs=5e-6)
    assert ndcg_at_k([2, 3], 2) == pytest.approx(dcg / idcg, rel=1e-15)


@given(st.lists(st.integers(0, 4), min_size=1, max_size=12), st.integers(1, 15))
def test_sorted_lists_are_ideal(labels, k):
    ranked = sorted(labels, reverse=True)
    expected = 0.0 if not any(labels) else 1.0
    assert ndcg_at_k(ranked, k) == pytest.approx(expected, abs=1e-15)


@given(st.lists(st.integers(0, 4), min_size=1, max_size=12), st.integers(1, 15))
def test_ndcg_bounded_and_matches_oracle(labels, k):
    v = ndcg_at_k(labels, k)
    assert 0.0 <= v <= 1.0 + 1e-15
    assert v == pytest.approx(oracles.ndcg(labels, k), abs=1e-12)


def test_ndcg_edge_cases():
    assert ndcg_at_k([0, 0, 0], 3) == 0.0
    with pytest.raises(ValueError):
        ndcg_at_k([1, 0], 0)
    with pytest.raises(ValueError):
        ndcg_at_k([], 1)


def test_rank_by_scores_tie_rule():
    assert rank_by_scores([3.0, 2.0, 1.0]).tolist() == [0, 1, 2]
    assert rank_by_scores([1.0, 1.0, 1.0, 1.0]).tolist() == [0, 1, 2, 3]
    assert rank_by_scores([1.0, 2.0, 3.0]).tolist() == [2, 1, 0]
    assert rank_by_scores([1.0, 2.0, 2.0, 0.0]).tolist() == [1, 2, 0, 3]


def _linear_params(weights):
    # 1-layer network: score = x . w
    w = np.asarray(weights, dtype=float)
    return ParameterVector(np.concatenate([w, [0.0]]), (w.size, 1))


def test_perfect_model_scores_one():
    rng = np.random.default_rng(0)
    qs = []
    for i in range(5):
        y = rng.integers(0, 3, size=8)
        y[0] = 2
        qs.append(QueryGroup(f"q{i}", y[:, None].astype(float), y))
    m = evaluate_model(_linear_params([1.0]), Dataset(qs, 1))
    for k in (1, 5, 10):
        assert m.aggregate[k] == pytest.approx(1.0, abs=1e-15)
    assert m.skipped == 0


def test_constant_model_matches_placement_enumeration():
    # a constant scorer keeps original order, so NDCG depends only on where the relevant item sits
    m_items = 6
    for pos in range(m_items):
        y = np.zeros(m_items, dtype=int)
        y[pos] = 1
        q = QueryGroup("q", np.ones((m_items, 1)), y)
        got = evaluate_model(_linear_params([0.0]), Dataset([q], 1), ks=(1, 5, 10))
        for k in (1, 5, 10):
            expected = (1.0 / math.log2(pos + 2)) if pos < k else 0.0
            assert got.aggregate[k] == pytest.approx(expected, abs=1e-15)
    # expectation over uniform placement, checked by enumeration
    exp10 = np.mean([1.0 / math.log2(p + 2) for p in range(m_items)])
    vals = []
    for pos in range(m_items):
        y = np.zeros(m_items, dtype=int)
        y[pos] = 1
        vals.append(evaluate_model(_linear_params([0.0]), Dataset([QueryGroup("q", np.ones((m_items, 1)), y)], 1)).aggregate[10])
    assert np.mean(vals) == pytest.approx(exp10, abs=1e-15)


def test_skipped_queries_excluded_from_mean():
    qs = [
        QueryGroup("a", np.array([[2.0], [1.0]]), [1, 0]),
        QueryGroup("b", np.array([[1.0], [2.0]]), [0, 0]),  # zero IDCG
        QueryGroup("c", np.array([[1.0], [2.0]]), [1, 0]),
    ]
    ds = Dataset(qs, 1)
    m = evaluate_model(_linear_params([1.0]), ds, eval_sets={"a": np.array([0, 1]), "b": np.array([0, 1]), "c": np.array([], dtype=int)})
    assert m.skipped == 2 and set(m.skipped_ids) == {"b", "c"}
    assert list(m.per_query) == ["a"]
    assert m.aggregate[10] == 1.0


def test_aggregate_is_mean_of_per_query(synthetic):
    rng = np.random.default_rng(1)
    theta = ParameterVector(np.concatenate([rng.normal(size=synthetic.feature_dims), [0.0]]), (synthetic.feature_dims, 1))
    m = evaluate_model(theta, synthetic)
    for k in m.ks:
        assert m.aggregate[k] == pytest.approx(np.mean(m.values(k)), rel=1e-15)
        assert all(0.0 <= v <= 1.0 for v in m.values(k))
    single = evaluate_model(theta, synthetic.with_queries(synthetic.queries[:1]))
    assert single.aggregate[10] == single.per_query[synthetic.queries[0].query_id][10]


def test_per_query_parameters():
    qs = [QueryGroup("a", np.array([[0.0], [1.0]]), [1, 0]), QueryGroup("b", np.array([[0.0], [1.0]]), [0, 1])]
    params = {"a": _linear_params([-1.0]), "b": _linear_params([1.0])}
    m = evaluate_model(params, Dataset(qs, 1))
    assert m.aggregate[1] == 1.0


# t-test -----------------------------------------------------------------------

def test_t_test_matches_high_precision_oracle():
    rng = np.random.default_rng(7)
    for _ in range(20):
        n = int(rng.integers(3, 40))
        a = rng.random(n)
        b = a - rng.normal(0.05, 0.1, size=n)
        res = paired_t_test(a, b)
        t, dof, p = oracles.paired_t(a, b)
        assert res.degrees_of_freedom == dof == n - 1
        assert res.t_statistic == pytest.approx(t, abs=1e-9)
        assert res.p_value == pytest.approx(p, abs=1e-9)
        assert res.significant_at_0_01 == (p < 0.01)


def test_t_test_trivial_cases():
    a = [0.3, 0.5, 0.9]
    eq = paired_t_test(a, a)
    assert eq.p_value == 1.0 and not eq.significant_at_0_01
    assert math.isnan(eq.t_statistic)
    # antisymmetric differences: mean zero, so t = 0 and p = 1
    anti = paired_t_test([0.1, 0.9, 0.5, 0.5], [0.9, 0.1, 0.4, 0.6])
    assert anti.t_statistic == pytest.approx(0.0, abs=1e-15)
    assert anti.p_value == pytest.approx(1.0, abs=1e-15)


def test_t_test_constant_nonzero_difference():
    res = paired_t_test([1.0, 2.0, 3.0], [0.5, 1.5, 2.5])
    assert res.zero_variance and math.isinf(res.t_statistic)
    assert res.p_value == 0.0 and not res.significant_at_0_01


def test_t_test_validation():
    with pytest.raises(ValueError):
        paired_t_test([1.0], [2.0])
    with pytest.raises(ValueError):
        paired_t_test([1.0, 2.0], [1.0])


@pytest.mark.parametrize("t,dof", [(0.0, 5), (1.0, 1), (2.5, 10), (-3.0, 30), (10.0, 3)])
def test_t_tail_against_oracle(t, dof):
    assert t_sf_two_sided(t, dof) == pytest.approx(float(oracles.t_two_sided(t, dof)), abs=1e-12)


def test_ndcg_exhaustive_small_lists():
    # every label list of length <= 4 over grades 0..2 and every ordering
    for n in range(1, 5):
        for labels in itertools.product(range(3), repeat=n):
            for perm in set(itertools.permutations(labels)):
                for k in (1, 2, n):
                    assert ndcg_at_k(list(perm), k) == pytest.approx(oracles.ndcg(list(perm), k), abs=1e-12)

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from crossret.errors import ContractError, DegenerateInputError
from crossret.metrics import SimilarityMatrix, rank_targets
from crossret.rerank import (
    RerankConfig,
    baseline_reverse_rerank,
    forward_component,
    mr_rerank,
    reverse_component,
    significance_component,
)
from oracles import mr_literal, mr_literal_t2i


def sim_of(scores, direction="i2t"):
    scores = np.asarray(scores, dtype=float)
    m, n = scores.shape
    return SimilarityMatrix([f"q{i}" for i in range(m)], [f"t{j}" for j in range(n)], scores, direction)


def as_indices(lists):
    return [[int(t[1:]) for t in r.order] for r in lists]


def assert_matches_literal(sim, cfg, literal):
    got = mr_rerank(sim, cfg)
    for r, (cands, tail) in zip(got, literal):
        assert [int(t[1:]) for t, _, _ in r.entries] == [t for t, _, _ in cands]
        assert [p for _, _, p in r.entries] == [p for _, _, p in cands]
        for (_, s, _), (_, s_ref, _) in zip(r.entries, cands):
            assert s == pytest.approx(s_ref, rel=1e-12, abs=1e-12)
        assert [int(t[1:]) for t in r.tail] == tail


positive_matrices = st.integers(1, 20).flatmap(
    lambda m: st.integers(1, 30).flatmap(
        lambda n: arrays(np.float64, (m, n), elements=st.floats(0.01, 1.0))
    )
)


# -- components --------------------------------------------------------------


def test_forward_component_examples():
    assert forward_component(0, 0.1) == pytest.approx(0.90483742, abs=1e-8)
    assert forward_component(9, 0.1) == pytest.approx(0.36787944, abs=1e-8)
    for xi in (1e-3, 0.1, 2.0):
        assert forward_component(0, xi) > forward_component(1, xi)


def test_reverse_component_examples():
    one = SimilarityMatrix(["c"], ["q"], np.array([[0.3]]))
    assert reverse_component(one, "c", "q", 1, 0.1) == pytest.approx(math.exp(-0.1))

    rev = SimilarityMatrix(["r0", "r1", "r2"], ["c0", "c1", "c2"], np.array([[.9, .1, .2], [.8, .7, .3], [.1, .2, .6]]))
    assert reverse_component(rev, "r1", "c0", 2, 0.1) == pytest.approx(math.exp(-0.1))
    # column 2 is position 2 in row 1, outside the top 2
    assert reverse_component(rev, "r1", "c2", 2, 0.1) == 0.0


def test_significance_component_examples():
    assert significance_component(SimilarityMatrix(["c"], ["q"], np.array([[0.7]])), "c", "q") == 1.0
    uniform = SimilarityMatrix(["c"], ["a", "b", "d", "e"], np.full((1, 4), 0.3))
    assert significance_component(uniform, "c", "b") == pytest.approx(0.25)
    row = SimilarityMatrix(["c"], ["a", "b", "d"], np.array([[0.2, 0.3, 0.5]]))
    assert significance_component(row, "c", "d") == pytest.approx(0.5, abs=1e-15)


def test_significance_degenerate_denominator():
    row = SimilarityMatrix(["c"], ["a", "b"], np.array([[0.5, -0.5]]))
    with pytest.raises(DegenerateInputError):
        significance_component(row, "c", "a")
    with pytest.raises(DegenerateInputError):
        mr_rerank(SimilarityMatrix(["a", "b"], ["c"], np.array([[0.5], [-0.5]])))


def test_config_validation():
    for bad in ({"k": 0}, {"l": 0}, {"xi": 0.0}, {"w_c1": -1.0}, {"direction": "sideways"}):
        with pytest.raises(ContractError):
            RerankConfig(**bad)


# -- mr_rerank ---------------------------------------------------------------


def test_one_by_one():
    xi, w1, w2 = 0.1, 0.5, 1.25
    (r,) = mr_rerank(sim_of([[0.4]]), RerankConfig(xi=xi, w_c1=w1, w_c2=w2))
    assert r.entries[0][0] == "t0"
    assert r.entries[0][1] == pytest.approx(math.exp(-xi) + w1 * math.exp(-xi) + w2 * 1.0, rel=1e-14)
    assert r.tail == ()


@settings(max_examples=1000, deadline=None)
@given(positive_matrices, st.floats(1e-3, 3.0), st.integers(1, 30))
def test_neutral_weights_preserve_order(scores, xi, k):
    sim = sim_of(scores)
    n = scores.shape[1]
    out = mr_rerank(sim, RerankConfig(k=k, l=5, xi=xi, w_c1=0.0, w_c2=0.0))
    for r in out:
        assert r.order == [t for t, _, _ in rank_targets(sim, r.query_id, n)]


@settings(max_examples=200, deadline=None)
@given(positive_matrices, st.integers(1, 30), st.integers(1, 20))
def test_entries_and_tail_partition_targets(scores, k, l):
    sim = sim_of(scores)
    for r in mr_rerank(sim, RerankConfig(k=k, l=l)):
        assert len(r.entries) == min(k, scores.shape[1])
        assert sorted(r.order) == sorted(sim.target_ids)
        vals = [(-s, p) for _, s, p in r.entries]
        assert vals == sorted(vals)


@settings(max_examples=200, deadline=None)
@given(positive_matrices, st.floats(1e-2, 1e2))
def test_invariant_under_positive_scaling(scores, alpha):
    cfg = RerankConfig(k=10, l=5)
    a = mr_rerank(sim_of(scores), cfg)
    b = mr_rerank(sim_of(scores * alpha), cfg)
    for ra, rb in zip(a, b):
        assert ra.order == rb.order
        for (_, sa, _), (_, sb, _) in zip(ra.entries, rb.entries):
            assert sa == pytest.approx(sb, rel=1e-9)


def test_matches_literal_oracle_random_3x3():
    rng = np.random.default_rng(0)
    alphabet = np.round(np.arange(0.1, 1.0, 0.1), 1)
    cfg = RerankConfig(k=3, l=2, xi=0.1, w_c1=0.5, w_c2=1.25)
    for _ in range(500):
        scores = rng.choice(alphabet, size=(3, 3))
        assert_matches_literal(sim_of(scores), cfg, mr_literal(scores.tolist(), 3, 2, 0.1, 0.5, 1.25))


def test_matches_literal_oracle_exhaustive_2x2():
    alphabet = [0.2, 0.5, 0.9]
    for cells in itertools.product(alphabet, repeat=4):
        scores = np.array(cells).reshape(2, 2)
        for k, l in ((1, 1), (2, 1), (2, 2)):
            cfg = RerankConfig(k=k, l=l, xi=0.3, w_c1=0.7, w_c2=2.0)
            assert_matches_literal(sim_of(scores), cfg, mr_literal(scores.tolist(), k, l, 0.3, 0.7, 2.0))


def test_matches_literal_oracle_random_up_to_6x6():
    rng = np.random.default_rng(1)
    for _ in range(300):
        m, n = rng.integers(1, 7, size=2)
        scores = rng.choice([0.1, 0.3, 0.5, 0.7, 0.9], size=(m, n))
        k, l = int(rng.integers(1, n + 2)), int(rng.integers(1, m + 2))
        cfg = RerankConfig(k=k, l=l, xi=0.1, w_c1=0.5, w_c2=1.25)
        assert_matches_literal(sim_of(scores), cfg, mr_literal(scores.tolist(), k, l, 0.1, 0.5, 1.25))


def test_t2i_direction_matches_mirrored_oracle():
    rng = np.random.default_rng(2)
    for _ in range(100):
        scores = rng.uniform(0.05, 1.0, size=(5, 4))
        sim = sim_of(scores)
        got = mr_rerank(sim, RerankConfig(k=3, l=2, direction="t2i"))
        literal = mr_literal_t2i(scores.tolist(), 3, 2, 0.1, 0.5, 1.25)
        for r, (cands, tail) in zip(got, literal):
            assert [int(t[1:]) for t, _, _ in r.entries] == [i for i, _, _ in cands]
            assert [int(t[1:]) for t in r.tail] == tail


def test_t2i_on_transpose_equals_i2t():
    rng = np.random.default_rng(3)
    scores = rng.uniform(0.05, 1.0, size=(6, 5))
    sim = sim_of(scores)
    a = mr_rerank(sim.transposed(), RerankConfig(k=4, l=3, direction="t2i"))
    b = mr_rerank(sim, RerankConfig(k=4, l=3, direction="i2t"))
    assert [r.entries for r in a] == [r.entries for r in b]


def test_reverse_confirmation_promotes_candidate():
    scores = [[0.50, 0.48, 0.05, 0.05], [0.90, 0.05, 0.05, 0.05], [0.80, 0.05, 0.05, 0.05], [0.70, 0.05, 0.05, 0.05]]
    (r0, *_) = mr_rerank(sim_of(scores), RerankConfig(k=4, l=4))
    assert r0.order[0] == "t1"
    (b0, *_) = mr_rerank(sim_of(scores), RerankConfig(k=4, l=4, w_c1=0.0, w_c2=0.0))
    assert b0.order[0] == "t0"


# -- baseline ----------------------------------------------------------------


def test_baseline_examples():
    (r,) = baseline_reverse_rerank(sim_of([[0.3]]), 1, 1)
    assert r.order == ["t0"]
    swapped = baseline_reverse_rerank(sim_of([[0.6, 0.5], [0.9, 0.1]]), 2, 1)
    assert swapped[0].order == ["t1", "t0"]


def test_baseline_absent_candidates_keep_order():
    # every target retrieves q0 first, so with l=1 only q0 sees confirmations;
    # q1 finds itself in no reverse list and keeps its forward order
    scores = np.array([[0.9, 0.8, 0.7], [0.3, 0.5, 0.1]])
    lists = baseline_reverse_rerank(sim_of(scores), 3, 1)
    assert lists[1].order == [t for t, _, _ in rank_targets(sim_of(scores), "q1", 3)]
    assert all(s == 1.0 for _, s, _ in lists[1].entries)


def test_baseline_validation():
    with pytest.raises(ContractError):
        baseline_reverse_rerank(sim_of([[0.3]]), 0, 1)

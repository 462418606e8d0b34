import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dr_glm.errors import PartitionError
from dr_glm.partition import (PartitionPlan, balanced_sizes, replicate_plan, seeded_permutation,
                              sequential_plan, splitmix64, stratified_plan)

MASK = (1 << 64) - 1


def splitmix64_reference(seed, count):
    # textbook scalar SplitMix64 in arbitrary-precision integers
    state, out = seed & MASK, []
    for _ in range(count):
        state = (state + 0x9E3779B97F4A7C15) & MASK
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
        out.append(z ^ (z >> 31))
    return out


def assert_bijection(plan: PartitionPlan):
    rows = np.concatenate([plan.rows_of(k) for k in range(1, plan.num_subsets + 1)])
    np.testing.assert_array_equal(np.sort(rows), np.arange(plan.total_rows))
    assert sum(plan.sizes) == plan.total_rows
    assert min(plan.sizes) >= 1
    starts = [a for a, _ in plan.ranges]
    ends = [b for _, b in plan.ranges]
    assert starts[0] == 0 and ends[-1] == plan.total_rows
    assert starts[1:] == ends[:-1]


def test_splitmix64_known_values():
    # published first outputs for seed 0
    assert int(splitmix64(0, 1)[0]) == 0xE220A8397B1DCDAF
    assert [int(v) for v in splitmix64(0, 3)] == splitmix64_reference(0, 3)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**64 - 1), st.integers(1, 20))
def test_splitmix64_matches_scalar_reference(seed, count):
    assert [int(v) for v in splitmix64(seed, count)] == splitmix64_reference(seed, count)


def test_sequential_examples():
    plan = sequential_plan(10, 3)
    assert plan.sizes == [4, 3, 3]
    assert plan.ranges == ((0, 4), (4, 7), (7, 10))
    assert sequential_plan(7, 1).ranges == ((0, 7),)
    big = sequential_plan(5_000_000, 10)
    assert big.sizes == [500_000] * 10
    assert big.ranges[1] == (500_000, 1_000_000)


@pytest.mark.parametrize("n,S", [(5, 0), (3, 4), (0, 1)])
def test_invalid_counts(n, S):
    with pytest.raises(PartitionError):
        sequential_plan(n, S)
    with pytest.raises(PartitionError):
        replicate_plan(n, S, seed=1)


def test_replicate_needs_seed():
    with pytest.raises(PartitionError):
        replicate_plan(10, 2, None)


def test_replicate_examples():
    plan = replicate_plan(10, 10, seed=123)
    assert plan.sizes == [1] * 10
    assert_bijection(plan)
    assert replicate_plan(1000, 4, 1) == replicate_plan(1000, 4, 1)
    a, b = replicate_plan(1000, 4, 1), replicate_plan(1000, 4, 2)
    assert a.sizes == b.sizes == [250] * 4
    assert not np.array_equal(a.permutation, b.permutation)


def test_replicate_frozen_permutation():
    # frozen from the scalar SplitMix64 reference: argsort of the keys
    keys = splitmix64_reference(2024, 12)
    expected = sorted(range(12), key=lambda i: (keys[i], i))
    np.testing.assert_array_equal(seeded_permutation(12, 2024), expected)


def test_stratified_examples():
    plan = stratified_plan(list("AABBB"), 10)
    assert [sorted(plan.rows_of(k).tolist()) for k in (1, 2)] == [[0, 1], [2, 3, 4]]
    single = stratified_plan(["x"] * 10, 4)
    assert single.sizes == [4, 3, 3]
    three = stratified_plan(list("aaaaabbbbbccccc"), 5)
    assert three.num_subsets == 3 and three.levels == ("a", "b", "c")


def test_stratified_small_level_warning():
    plan = stratified_plan(list("AAAAAB"), 10, column="g", min_rows=3)
    assert len(plan.warnings) == 1
    assert "level 'B'" in plan.warnings[0]
    assert plan.to_json()["warnings"] == list(plan.warnings)


@settings(max_examples=80, deadline=None)
@given(st.integers(1, 10_000), st.data())
def test_all_strategies_are_bijections(n, data):
    S = data.draw(st.integers(1, min(n, 50)))
    seed = data.draw(st.integers(0, 2**63))
    seq = sequential_plan(n, S)
    rep = replicate_plan(n, S, seed)
    assert_bijection(seq)
    assert_bijection(rep)
    assert rep.sizes == seq.sizes == balanced_sizes(n, S)
    assert max(seq.sizes) - min(seq.sizes) <= 1
    assert seq.sizes == sorted(seq.sizes, reverse=True)
    labels = data.draw(st.integers(1, 6))
    values = np.random.default_rng(seed % 2**32).integers(0, labels, size=n)
    cap = data.draw(st.integers(1, n))
    strat = stratified_plan(values, cap)
    assert_bijection(strat)
    assert max(strat.sizes) <= cap
    for k in range(1, strat.num_subsets + 1):
        assert len({str(v) for v in values[strat.rows_of(k)]}) == 1


def test_sequential_single_subset_is_identity():
    plan = sequential_plan(9, 1)
    np.testing.assert_array_equal(plan.rows_of(1), np.arange(9))
    assert plan.contiguous


def test_subset_of_rows_inverts_assignment():
    plan = replicate_plan(50, 7, seed=9)
    labels = plan.subset_of_rows()
    for k in range(1, 8):
        assert np.all(labels[plan.rows_of(k)] == k)


def test_plan_json_round_trip_fields():
    doc = replicate_plan(20, 3, seed=5).to_json()
    assert json.loads(json.dumps(doc)) == doc
    assert doc["strategy"] == "replicate" and doc["seed"] == 5
    assert doc["ranges"] == [[0, 7], [7, 14], [14, 20]]
    assert len(doc["permutation_digest"]) == 64
    assert "permutation_digest" not in sequential_plan(20, 3).to_json()


def test_rows_of_bounds():
    with pytest.raises(PartitionError):
        sequential_plan(5, 2).rows_of(3)

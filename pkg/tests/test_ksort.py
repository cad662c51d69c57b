"""Sorting pass: norms, permutations, table remapping, whole-head plans."""

from __future__ import annotations

import math

import numpy as np
import pytest

from bfpksort import (
    HeadWeights,
    Permutation,
    PermutationPlan,
    argsort_norms,
    default_rope_tables,
    permute_rows,
    plan_head,
    remap_rope_tables,
    rope_apply,
    row_norms,
)
from bfpksort.errors import InvalidRopeTables, ShapeMismatch


def naive_row_norms(w):
    """Left-to-right scalar accumulation, independent of the vectorized path."""
    out = []
    for row in w:
        acc = 0.0
        for v in row:
            acc += float(v) * float(v)
        out.append(math.sqrt(acc))
    return out


# ---------------------------------------------------------------------------
# row_norms
# ---------------------------------------------------------------------------


def test_identity_rows():
    assert row_norms(np.eye(2)).tolist() == [1.0, 1.0]


def test_three_four_five():
    assert row_norms(np.array([[3.0, 4.0], [0.0, 0.0]])).tolist() == [5.0, 0.0]


def test_matches_naive_reference():
    rng = np.random.default_rng(11)
    w = rng.normal(size=(8, 16))
    got = row_norms(w)
    ref = naive_row_norms(w)
    assert np.allclose(got, ref, rtol=1e-12, atol=0.0)


def test_row_norms_rejects_vectors():
    with pytest.raises(ShapeMismatch):
        row_norms(np.ones(4))


# ---------------------------------------------------------------------------
# argsort_norms / Permutation
# ---------------------------------------------------------------------------


def test_ascending_order():
    perm = argsort_norms([3.0, 1.0, 2.0])
    assert perm.indices.tolist() == [1, 2, 0]


def test_ties_keep_original_order():
    assert argsort_norms([5.0, 5.0, 5.0]).indices.tolist() == [0, 1, 2]
    assert argsort_norms([5.0, 5.0, 5.0], order="descending").indices.tolist() == [0, 1, 2]


def test_descending_order():
    perm = argsort_norms([3.0, 1.0, 2.0], order="descending")
    assert perm.indices.tolist() == [0, 2, 1]


def test_sortedness_on_random_input():
    rng = np.random.default_rng(12)
    norms = rng.exponential(size=100)
    perm = argsort_norms(norms)
    assert np.all(np.diff(norms[perm.indices]) >= 0)
    desc = argsort_norms(norms, order="descending")
    assert np.all(np.diff(norms[desc.indices]) <= 0)


def test_bad_order_rejected():
    with pytest.raises(ValueError):
        argsort_norms([1.0], order="sideways")


def test_permutation_bijectivity_enforced():
    with pytest.raises(ValueError):
        Permutation(np.array([0, 0, 2]))


def test_inverse_composes_to_identity():
    rng = np.random.default_rng(13)
    for _ in range(20):
        perm = Permutation(rng.permutation(17).astype(np.intp))
        assert perm.inverse().indices[perm.indices].tolist() == list(range(17))
        assert Permutation.identity(17).is_identity()


# ---------------------------------------------------------------------------
# permute_rows
# ---------------------------------------------------------------------------


def test_identity_permutation_is_noop():
    rng = np.random.default_rng(14)
    w = rng.normal(size=(6, 4))
    assert np.array_equal(permute_rows(w, Permutation.identity(6)), w)


def test_two_row_swap():
    w = np.array([[1.0, 2.0], [3.0, 4.0]])
    out = permute_rows(w, Permutation(np.array([1, 0])))
    assert out.tolist() == [[3.0, 4.0], [1.0, 2.0]]


def test_permute_then_inverse_restores_bitwise():
    rng = np.random.default_rng(15)
    w = rng.normal(size=(9, 5))
    perm = Permutation(rng.permutation(9).astype(np.intp))
    back = permute_rows(permute_rows(w, perm), perm.inverse())
    assert np.array_equal(back, w)


def test_permute_rows_shape_check():
    with pytest.raises(ShapeMismatch):
        permute_rows(np.ones((3, 2)), Permutation.identity(4))


# ---------------------------------------------------------------------------
# remap_rope_tables
# ---------------------------------------------------------------------------


def test_identity_remap_is_noop():
    t = default_rope_tables(8)
    r = remap_rope_tables(t, Permutation.identity(8))
    assert np.array_equal(r.theta, t.theta)
    assert np.array_equal(r.partner, t.partner)
    assert np.array_equal(r.sign, t.sign)


def test_pairwise_swap_example():
    # moving whole pairs keeps local structure: partner stays [1,0,3,2]
    t = default_rope_tables(4)
    r = remap_rope_tables(t, Permutation(np.array([2, 3, 0, 1])))
    assert r.partner.tolist() == [1, 0, 3, 2]
    assert r.sign.tolist() == [-1, 1, -1, 1]
    assert np.array_equal(r.theta, t.theta[[2, 3, 0, 1]])


@pytest.mark.parametrize("layout", ["interleaved", "half_split"])
def test_random_remaps_preserve_invariants(layout):
    rng = np.random.default_rng(16)
    t = default_rope_tables(8, layout=layout)
    for _ in range(50):
        perm = Permutation(rng.permutation(8).astype(np.intp))
        remap_rope_tables(t, perm).validate()


def test_literal_array_permute_breaks_pairing():
    # translating partner values is what keeps the involution; a plain array
    # permute (partner_values=False) generally does not survive validation
    t = default_rope_tables(8)
    rng = np.random.default_rng(17)
    broken = 0
    for _ in range(20):
        perm = Permutation(rng.permutation(8).astype(np.intp))
        literal = remap_rope_tables(t, perm, partner_values=False)
        try:
            literal.validate()
        except InvalidRopeTables:
            broken += 1
    assert broken > 0


def test_invalid_input_tables_rejected():
    t = default_rope_tables(4)
    bad = type(t)(theta=t.theta, partner=np.zeros(4, dtype=np.intp), sign=t.sign)
    with pytest.raises(InvalidRopeTables):
        remap_rope_tables(bad, Permutation.identity(4))


# ---------------------------------------------------------------------------
# plan_head
# ---------------------------------------------------------------------------


def _random_head(rng, d_h=8, d_model=16, with_bias=False):
    return HeadWeights(
        w_k=rng.normal(size=(d_h, d_model)),
        w_q=rng.normal(size=(d_h, d_model)),
        b_k=rng.normal(size=d_h) if with_bias else None,
        b_q=rng.normal(size=d_h) if with_bias else None,
    )


def test_presorted_head_gets_identity_plan():
    w_k = np.arange(1.0, 5.0)[:, None] * np.ones((4, 6))
    weights = HeadWeights(w_k=w_k, w_q=np.ones((4, 6)))
    plan = plan_head(weights)
    assert plan.perm.is_identity()
    assert np.array_equal(plan.w_k_permuted, weights.w_k)
    assert np.array_equal(plan.w_q_permuted, weights.w_q)


def test_two_channel_toy_head():
    weights = HeadWeights(
        w_k=np.array([[2.0, 0.0], [1.0, 0.0]]),
        w_q=np.array([[10.0, 0.0], [20.0, 0.0]]),
    )
    plan = plan_head(weights)
    assert plan.perm.indices.tolist() == [1, 0]
    assert plan.w_k_permuted.tolist() == [[1.0, 0.0], [2.0, 0.0]]
    assert plan.w_q_permuted.tolist() == [[20.0, 0.0], [10.0, 0.0]]


def test_norms_sorted_after_plan():
    rng = np.random.default_rng(18)
    weights = _random_head(rng, d_h=16, d_model=8)
    plan = plan_head(weights)
    assert np.all(np.diff(row_norms(plan.w_k_permuted)) >= 0)
    desc = plan_head(weights, order="descending")
    assert np.all(np.diff(row_norms(desc.w_k_permuted)) <= 0)


def test_product_preservation():
    # W_q^T . W_k is invariant to simultaneous row permutation, entrywise up
    # to the reordering of the channel sum
    rng = np.random.default_rng(19)
    weights = _random_head(rng, d_h=12, d_model=10)
    plan = plan_head(weights)
    a = weights.w_q.T @ weights.w_k
    b = plan.w_q_permuted.T @ plan.w_k_permuted
    assert np.allclose(a, b, rtol=0.0, atol=1e-12 * float(np.abs(a).max()))


def test_plan_is_deterministic():
    rng1 = np.random.default_rng(20)
    rng2 = np.random.default_rng(20)
    tables = default_rope_tables(8)
    p1 = plan_head(_random_head(rng1), tables)
    p2 = plan_head(_random_head(rng2), tables)
    assert np.array_equal(p1.perm.indices, p2.perm.indices)
    assert np.array_equal(p1.w_k_permuted, p2.w_k_permuted)
    assert np.array_equal(p1.rope.theta, p2.rope.theta)


def test_bias_vectors_follow_rows():
    rng = np.random.default_rng(21)
    weights = _random_head(rng, with_bias=True)
    plan = plan_head(weights)
    assert np.array_equal(plan.b_k_permuted, weights.b_k[plan.perm.indices])
    assert np.array_equal(plan.b_q_permuted, weights.b_q[plan.perm.indices])


def test_rope_commutes_through_plan():
    rng = np.random.default_rng(22)
    weights = _random_head(rng, d_h=8)
    tables = default_rope_tables(8)
    plan = plan_head(weights, tables)
    x = rng.normal(size=8)
    lhs = rope_apply(tables, x, 5)[plan.perm.indices]
    rhs = rope_apply(plan.rope, x[plan.perm.indices], 5)
    assert np.array_equal(lhs, rhs)


def test_odd_head_dim_with_rope_rejected():
    weights = HeadWeights(w_k=np.ones((3, 4)), w_q=np.ones((3, 4)))
    with pytest.raises(ShapeMismatch):
        plan_head(weights, default_rope_tables(4))


def test_head_weights_shape_validation():
    with pytest.raises(ShapeMismatch):
        HeadWeights(w_k=np.ones((4, 3)), w_q=np.ones((3, 4)))
    with pytest.raises(ShapeMismatch):
        HeadWeights(w_k=np.ones((4, 3)), w_q=np.ones((4, 3)), b_k=np.ones(3))


def test_plan_json_round_trip():
    rng = np.random.default_rng(23)
    weights = _random_head(rng, d_h=8)
    tables = default_rope_tables(8, layout="half_split")
    plan = plan_head(weights, tables, order="descending")
    text = plan.to_json()
    perm, rope, order = PermutationPlan.permutation_from_json(text)
    assert np.array_equal(perm.indices, plan.perm.indices)
    assert order == "descending"
    assert np.array_equal(rope.theta, plan.rope.theta)
    assert np.array_equal(rope.partner, plan.rope.partner)
    assert np.array_equal(rope.sign, plan.rope.sign)


def test_plan_json_without_rope():
    rng = np.random.default_rng(24)
    plan = plan_head(_random_head(rng))
    perm, rope, order = PermutationPlan.permutation_from_json(plan.to_json())
    assert rope is None
    assert np.array_equal(perm.indices, plan.perm.indices)

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import block_attention, naive_attention
from lrsa.dca import DcaWeights, dual_fuse, joint_attention, stack, unilateral_fuse
from lrsa.numerics import DimensionError, Parameter, Tensor, backward, sum_all


def _weights(rng, d, prefix="w"):
    return DcaWeights.init(d, rng, prefix)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 8), st.integers(1, 8), st.sampled_from([4, 8, 16]), st.integers(0, 2**31))
def test_joint_attention_equals_per_block_sums(l_h, l_hl, d, seed):
    rng = np.random.default_rng(seed)
    H, H_L = rng.normal(size=(l_h, d)), rng.normal(size=(l_hl, d))
    w = _weights(rng, d)
    A_H, A_L = joint_attention(stack(Tensor(H), Tensor(H_L)), w)
    ref_H, ref_L = block_attention(H, H_L, w.wq.data, w.wk.data, w.wv.data)
    assert A_H.shape == (l_h, d) and A_L.shape == (l_hl, d)
    assert np.max(np.abs(A_H.data - ref_H)) < 1e-10
    assert np.max(np.abs(A_L.data - ref_L)) < 1e-10


def test_identical_blocks_give_identical_outputs(rng):
    H = rng.normal(size=(3, 4))
    A_H, A_L = joint_attention(stack(Tensor(H), Tensor(H.copy())), _weights(rng, 4))
    assert np.allclose(A_H.data, A_L.data, atol=1e-14)


def test_single_rationale_row(rng):
    H, H_L = rng.normal(size=(2, 4)), rng.normal(size=(1, 4))
    A_H, A_L = joint_attention(stack(Tensor(H), Tensor(H_L)), DcaWeights.identity(4))
    Z = np.vstack([H, H_L])
    full = naive_attention(Z, Z, Z)
    assert np.allclose(A_H.data, full[:2], atol=1e-12) and np.allclose(A_L.data, full[2:], atol=1e-12)


def test_branches_are_isolated(rng):
    d = 4
    H_V, H_t, H_Li, H_Lt = (Tensor(rng.normal(size=(n, d))) for n in (2, 5, 3, 4))
    wi, wt = _weights(rng, d, "i"), _weights(rng, d, "t")
    base = dual_fuse(H_V, H_t, H_Li, H_Lt, wi, wt)
    moved = dual_fuse(H_V, H_t, Tensor(H_Li.data + 3.0), H_Lt, wi, wt)
    assert np.array_equal(base[1].data, moved[1].data)
    assert np.array_equal(base[3].data, moved[3].data)
    assert not np.allclose(base[0].data, moved[0].data)


def test_unilateral_top_block_matches_joint(rng):
    d = 8
    H_V, H_t, H_Li, H_Lt = (Tensor(rng.normal(size=(n, d))) for n in (2, 5, 3, 4))
    wi, wt = _weights(rng, d, "i"), _weights(rng, d, "t")
    dual = dual_fuse(H_V, H_t, H_Li, H_Lt, wi, wt)
    uni = unilateral_fuse(H_V, H_t, H_Li, H_Lt, wi, wt)
    assert np.max(np.abs(dual[0].data - uni[0].data)) < 1e-12
    assert np.max(np.abs(dual[1].data - uni[1].data)) < 1e-12
    assert uni[2] is H_Li and uni[3] is H_Lt


def test_gradient_reaches_rationale_through_feature_rows(rng):
    d = 4
    H = Tensor(rng.normal(size=(2, d)))
    H_L = Parameter(rng.normal(size=(3, d)), "HL")
    A_H, _ = joint_attention(stack(H, H_L), _weights(rng, d))
    backward(sum_all(A_H))
    assert np.abs(H_L.grad).sum() > 0


def test_stack_rejects_missing_or_mismatched_blocks(rng):
    with pytest.raises(DimensionError):
        stack(None, Tensor(rng.normal(size=(2, 4))))
    with pytest.raises(DimensionError):
        stack(Tensor(rng.normal(size=(2, 4))), Tensor(rng.normal(size=(2, 3))))


def test_init_is_uniform_within_bound(rng):
    w = DcaWeights.init(16, rng, "x")
    for p in w.parameters():
        assert p.shape == (16, 16) and np.abs(p.data).max() <= 0.25
    assert [p.name for p in w.parameters()] == ["x.wq", "x.wk", "x.wv"]

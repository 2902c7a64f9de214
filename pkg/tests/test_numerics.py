import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from helpers import finite_difference, naive_attention, naive_matmul, naive_softmax, relative_error
from lrsa.numerics import (
    Adam,
    AdamState,
    ContractError,
    DimensionError,
    NumericsError,
    Parameter,
    Tensor,
    add,
    backward,
    concat,
    cross_entropy,
    cross_entropy_rows,
    embedding,
    gelu,
    layer_norm,
    log_softmax,
    matmul,
    mean_all,
    mul,
    no_grad,
    permute,
    reshape,
    scale,
    scaled_dot_attention,
    sgd_adam_step,
    slice_rows,
    softmax,
    softmax_rows,
    sub,
    sum_all,
    transpose,
)


def test_matmul_identity_and_permutation():
    m = Tensor([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(matmul(Tensor(np.eye(2)), m).data, m.data)
    p = Tensor([[0.0, 1.0], [1.0, 0.0]])
    assert np.array_equal(matmul(Tensor(np.eye(2)), p).data, [[0, 1], [1, 0]])


def test_matmul_matches_triple_loop(rng):
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    assert np.max(np.abs(matmul(Tensor(a), Tensor(b)).data - naive_matmul(a, b))) < 1e-12


def test_matmul_shape_mismatch():
    with pytest.raises(DimensionError):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_matmul_associative(rng):
    a, b, c = (Tensor(rng.normal(size=s)) for s in [(3, 4), (4, 5), (5, 2)])
    left = matmul(matmul(a, b), c).data
    right = matmul(a, matmul(b, c)).data
    assert np.max(np.abs(left - right)) < 1e-9


@pytest.mark.parametrize(
    "row, expected",
    [
        ([0.0, 0.0], [0.5, 0.5]),
        ([1000.0, 1000.0, 1000.0], [1 / 3] * 3),
        ([math.log(1), math.log(2), math.log(3)], [1 / 6, 2 / 6, 3 / 6]),
    ],
)
def test_softmax_rows_examples(row, expected):
    out = softmax_rows(Tensor([row])).data[0]
    assert np.allclose(out, expected, atol=1e-15, rtol=0)


@settings(max_examples=50, deadline=None)
@given(
    arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 6)), elements=st.floats(-30, 30)),
    st.floats(-50, 50),
)
def test_softmax_rows_sum_to_one_and_shift_invariant(x, c):
    y = softmax_rows(Tensor(x)).data
    assert np.max(np.abs(y.sum(axis=1) - 1.0)) < 1e-12
    y2 = softmax_rows(Tensor(x + c)).data
    assert np.max(np.abs(y - y2)) < 1e-10


def test_softmax_mask_blocks_entries():
    x = Tensor([[1.0, 2.0, 3.0]])
    y = softmax(x, mask=np.array([[False, True, False]])).data[0]
    assert y[1] == 0.0
    assert np.allclose(y[[0, 2]], naive_softmax([1.0, 3.0]))
    with pytest.raises(ContractError):
        softmax(x, mask=np.ones((1, 3), dtype=bool))


def test_attention_single_key_returns_value_row(rng):
    V = rng.normal(size=(1, 4))
    out = scaled_dot_attention(Tensor(rng.normal(size=(3, 4))), Tensor(rng.normal(size=(1, 4))), Tensor(V))
    assert np.allclose(out.data, np.repeat(V, 3, axis=0), atol=1e-15)


def test_attention_sharp_identity_selects_rows():
    d = 4
    big = Tensor(60.0 * np.eye(d))
    V = Tensor(np.arange(16.0).reshape(4, 4))
    out = scaled_dot_attention(big, big, V).data
    assert np.max(np.abs(out - naive_attention(big.data, big.data, V.data))) < 1e-12
    assert np.allclose(out, V.data, atol=1e-6)


def test_attention_matches_naive_and_literal_composition(rng):
    Q, K, V = (rng.normal(size=(4, 8)) for _ in range(3))
    out = scaled_dot_attention(Tensor(Q), Tensor(K), Tensor(V)).data
    assert np.max(np.abs(out - naive_attention(Q, K, V))) < 1e-12
    literal = matmul(softmax_rows(scale(matmul(Tensor(Q), transpose(Tensor(K))), 1 / math.sqrt(8))), Tensor(V))
    assert np.max(np.abs(out - literal.data)) < 1e-12


def test_attention_shape_errors():
    with pytest.raises(DimensionError):
        scaled_dot_attention(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 4))), Tensor(np.ones((2, 4))))
    with pytest.raises(DimensionError):
        scaled_dot_attention(Tensor(np.ones((2, 4))), Tensor(np.ones((3, 4))), Tensor(np.ones((2, 4))))


def test_layer_norm_examples(rng):
    one, zero = Tensor(np.ones(3)), Tensor(np.zeros(3))
    assert np.array_equal(layer_norm(Tensor([[5.0, 5.0, 5.0]]), one, zero).data, np.zeros((1, 3)))
    out = layer_norm(Tensor([[1.0, -1.0]]), Tensor(np.ones(2)), Tensor(np.zeros(2))).data
    assert np.allclose(out, [[1.0, -1.0]], atol=1e-5)

    x, g, b = rng.normal(size=(1, 7)), rng.normal(size=7), rng.normal(size=7)
    mu = sum(x[0]) / 7
    var = sum((v - mu) ** 2 for v in x[0]) / 7
    ref = [(v - mu) / math.sqrt(var + 1e-5) * g[i] + b[i] for i, v in enumerate(x[0])]
    assert np.max(np.abs(layer_norm(Tensor(x), Tensor(g), Tensor(b)).data[0] - ref)) < 1e-10


def test_cross_entropy_examples(rng):
    assert abs(cross_entropy(Tensor([0.0, 0.0]), 0).item() - math.log(2)) < 1e-15
    assert cross_entropy(Tensor([10.0, -10.0]), 0).item() < 1e-8
    z = rng.normal(size=6)
    ref = -math.log(naive_softmax(z)[4])
    assert abs(cross_entropy(Tensor(z), 4).item() - ref) < 1e-12
    with pytest.raises(IndexError):
        cross_entropy(Tensor([1.0, 2.0]), 2)


def test_cross_entropy_rows_is_mean_of_rows(rng):
    z = rng.normal(size=(3, 5))
    t = [0, 4, 2]
    ref = np.mean([cross_entropy(Tensor(z[i]), t[i]).item() for i in range(3)])
    assert abs(cross_entropy_rows(Tensor(z), t).item() - ref) < 1e-14


def test_backward_linear_map_gradient(rng):
    x = rng.normal(size=(3, 1))
    W = Parameter(rng.normal(size=(2, 3)), "W")
    backward(sum_all(matmul(W, Tensor(x))))
    assert np.allclose(W.grad, np.repeat(x.T, 2, axis=0))


def test_backward_cross_entropy_is_softmax_minus_onehot(rng):
    logits = Parameter(rng.normal(size=5), "z")
    backward(cross_entropy(logits, 3))
    expected = naive_softmax(logits.data)
    expected[3] -= 1
    assert np.allclose(logits.grad, expected, atol=1e-15)


def test_backward_accumulates_and_requires_scalar(rng):
    W = Parameter(rng.normal(size=(2, 2)), "W")
    backward(sum_all(W))
    backward(sum_all(W))
    assert np.array_equal(W.grad, 2 * np.ones((2, 2)))
    with pytest.raises(ContractError):
        backward(W)


def test_no_grad_records_nothing(rng):
    W = Parameter(rng.normal(size=(2, 2)), "W")
    with no_grad():
        y = matmul(W, W)
    assert not y.requires_grad


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nonfinite_is_an_error():
    with pytest.raises(NumericsError):
        Tensor([1.0, np.nan])
    with pytest.raises(NumericsError):
        scale(Tensor([1e308]), 10.0)


def test_zero_dimension_rejected():
    with pytest.raises(DimensionError):
        Tensor(np.zeros((0, 3)))


def test_bias_broadcast_only_over_rows():
    x = Tensor(np.ones((2, 3)))
    assert add(x, Tensor([1.0, 2.0, 3.0])).shape == (2, 3)
    with pytest.raises(DimensionError):
        add(x, Tensor([1.0, 2.0]))
    with pytest.raises(DimensionError):
        mul(x, Tensor(np.ones((3, 2))))


# every differentiable op against central differences
def _ops(rng):
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(4, 2))
    c = rng.normal(size=(3, 4))
    bias = rng.normal(size=4)
    h = rng.normal(size=(2, 3, 4))
    h2 = rng.normal(size=(2, 4, 3))
    return {
        "add": ([a, c], lambda x, y: add(x, y)),
        "add_bias": ([a, bias], lambda x, y: add(x, y)),
        "sub": ([a, c], lambda x, y: sub(x, y)),
        "mul": ([a, c], lambda x, y: mul(x, y)),
        "scale": ([a], lambda x: scale(x, -1.7)),
        "matmul": ([a, b], lambda x, y: matmul(x, y)),
        "batched_matmul": ([h, h2], lambda x, y: matmul(x, y)),
        "transpose": ([a], lambda x: transpose(x)),
        "reshape": ([a], lambda x: reshape(x, (2, 6))),
        "permute": ([h], lambda x: permute(x, (1, 0, 2))),
        "concat": ([a, c], lambda x, y: concat([x, y])),
        "slice": ([a], lambda x: slice_rows(x, 1, 3)),
        "embedding": ([a], lambda x: embedding(x, [2, 0, 2])),
        "softmax": ([a], lambda x: softmax(x)),
        "masked_softmax": ([a], lambda x: softmax(x, np.triu(np.ones((3, 4), dtype=bool), 2))),
        "log_softmax": ([a], lambda x: log_softmax(x)),
        "gelu": ([a], lambda x: gelu(x)),
        "layer_norm": ([a, bias, rng.normal(size=4)], lambda x, g, bb: layer_norm(x, g, bb)),
        "attention": ([a, c, rng.normal(size=(3, 4))], lambda q, k, v: scaled_dot_attention(q, k, v)),
        "cross_entropy": ([bias], lambda x: cross_entropy(x, 1)),
        "cross_entropy_rows": ([a], lambda x: cross_entropy_rows(x, [0, 3, 1])),
        "mean": ([a], lambda x: mean_all(x)),
    }


@pytest.mark.parametrize("name", sorted(_ops(np.random.default_rng(0))))
def test_gradients_match_finite_differences(name):
    rng = np.random.default_rng(7)
    inputs, fn = _ops(rng)[name]
    params = [Parameter(x.copy(), f"p{i}") for i, x in enumerate(inputs)]
    weights = Tensor(rng.normal(size=fn(*params).shape)) if fn(*params).data.size > 1 else None

    def loss():
        out = fn(*params)
        return sum_all(mul(out, weights)) if weights is not None else out

    backward(loss())
    numeric = finite_difference(lambda: loss().item(), params)
    for p in params:
        assert relative_error(p.grad, numeric[p.name]) < 1e-4, p.name


def test_adam_first_step_and_zero_grad():
    w = Parameter([1.0], "w")
    w.grad = np.array([1.0])
    sgd_adam_step([w], 0.1, AdamState())
    assert abs((1.0 - w.data[0]) - 0.1) < 1e-6
    assert w.grad is None

    z = Parameter([2.0], "z")
    z.grad = np.array([0.0])
    sgd_adam_step([z], 0.1, AdamState())
    assert z.data[0] == 2.0


def test_adam_requires_grads():
    with pytest.raises(ContractError):
        sgd_adam_step([Parameter([1.0], "w")], 0.1, AdamState())


def test_adam_converges_on_quadratic_bowl():
    w = Parameter([1.0], "w")
    opt = Adam([w], lr=0.05)
    for _ in range(200):
        backward(sum_all(mul(w, w)))
        opt.step()
    assert abs(w.data[0]) < 1e-2

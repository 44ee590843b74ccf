import threading

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from face3dsr import tensor as T
from face3dsr.tensor import DimensionError, Tensor

finite = st.floats(-10, 10, allow_nan=False, width=32)


def leaf(a):
    return Tensor(np.asarray(a, dtype=np.float32), requires_grad=True)


def test_storage_is_float32_and_shadow64_switches():
    assert Tensor([1, 2]).data.dtype == np.float32
    with T.shadow64():
        assert Tensor([1, 2]).data.dtype == np.float64
    assert Tensor([1, 2]).data.dtype == np.float32


def test_sigmoid_at_zero_is_exactly_half():
    assert T.sigmoid(Tensor(np.zeros(5))).data.tolist() == [0.5] * 5


def test_relu_examples():
    x = np.array([-2.0, -0.5, 0.0, 0.5, 3.0])
    np.testing.assert_array_equal(T.relu(Tensor(x)).data, [0, 0, 0, 0.5, 3.0])


def test_diamond_graph_accumulates_both_paths():
    x = leaf(3.0)
    (x + x).backward()
    assert x.grad == 2.0
    y = leaf([1.0, 2.0])
    shared = y * 2.0
    (shared * shared + shared).sum().backward()
    np.testing.assert_allclose(y.grad, 8 * y.data + 2)


def test_backward_visits_each_node_once():
    x = leaf(1.0)
    calls = []
    y = x * 2.0
    original = y._backward

    def counting(g):
        calls.append(1)
        original(g)

    y._backward = counting
    (y + y + y).backward()
    assert len(calls) == 1
    assert x.grad == 6.0


def test_deep_chain_does_not_recurse():
    x = leaf(1.0)
    y = x
    for _ in range(5000):
        y = y + 0.0
    y.backward()
    assert x.grad == 1.0


def test_backward_requires_scalar():
    with pytest.raises(DimensionError):
        leaf([1.0, 2.0]).backward()


def test_channel_to_spatial_broadcast_and_gradient():
    f = leaf(np.ones((2, 3, 4, 4)))
    g = leaf(np.arange(6).reshape(2, 3, 1, 1))
    (f * g).sum().backward()
    np.testing.assert_array_equal(g.grad, np.full((2, 3, 1, 1), 16.0))


@pytest.mark.parametrize("a,b", [((3,), (3, 1)), ((2, 3), (3, 2)), ((2, 3, 4), (2, 2, 4))])
def test_incompatible_shapes_raise_dimension_error(a, b):
    with pytest.raises(DimensionError):
        T.add(Tensor(np.zeros(a)), Tensor(np.zeros(b)))


def test_dimension_error_names_axes():
    with pytest.raises(DimensionError, match=r"axes \[1\]"):
        T.mul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 4))))


def test_no_grad_records_nothing():
    x = leaf(2.0)
    with T.no_grad():
        y = x * x
    assert not y.requires_grad and y._backward is None


@given(hnp.arrays(np.float32, hnp.array_shapes(min_dims=1, max_dims=3, max_side=4), elements=finite))
def test_sum_gradient_is_ones(a):
    x = leaf(a)
    x.sum().backward()
    np.testing.assert_array_equal(x.grad, np.ones_like(a))


@given(hnp.arrays(np.float64, (3, 4), elements=st.floats(-3, 3)), st.floats(0.1, 2.0))
def test_mean_and_norm_match_numpy(a, s):
    np.testing.assert_allclose(T.mean(Tensor(a), axis=1).data, a.astype(np.float32).mean(axis=1), rtol=1e-6, atol=1e-6)
    np.testing.assert_allclose(T.norm(Tensor(a * s), axis=1).data,
                               np.linalg.norm((a * s).astype(np.float32), axis=1), rtol=1e-5, atol=1e-6)


def test_norm_of_zero_vector_has_zero_subgradient():
    x = leaf(np.zeros((2, 3)))
    T.norm(x, axis=1).sum().backward()
    np.testing.assert_array_equal(x.grad, np.zeros((2, 3)))


def test_clamp_gradient_masks_saturated_entries():
    x = leaf([-1.0, 0.5, 2.0])
    T.clamp(x, 0.0, 1.0).sum().backward()
    np.testing.assert_array_equal(x.grad, [0.0, 1.0, 0.0])


def test_take_and_scatter_add_are_adjoint():
    rng = np.random.default_rng(0)
    src = rng.standard_normal((6, 2))
    idx = np.array([0, 3, 3, 1, 4, 0])
    y = rng.standard_normal((5, 2))
    scattered = T.scatter_add(Tensor(src), idx, 5).data
    gathered = T.take(Tensor(y), idx).data
    assert np.isclose((scattered * y).sum(), (src * gathered).sum(), rtol=1e-5)


def test_scatter_add_length_mismatch():
    with pytest.raises(DimensionError):
        T.scatter_add(Tensor(np.zeros((3, 2))), np.array([0, 1]), 4)


def test_matmul_shapes_and_errors():
    a, b = Tensor(np.ones((2, 3))), Tensor(np.ones((3, 4)))
    assert T.matmul(a, b).shape == (2, 4)
    with pytest.raises(DimensionError):
        T.matmul(a, Tensor(np.ones((2, 4))))
    with pytest.raises(DimensionError):
        T.matmul(Tensor(np.ones((2, 2, 2))), a)


def test_reshape_error_is_dimension_error():
    with pytest.raises(DimensionError):
        T.reshape(Tensor(np.zeros(6)), (4, 2))


def test_concat_and_stack_route_gradients():
    a, b = leaf([1.0, 2.0]), leaf([3.0])
    (T.concat([a, b]) * Tensor([1.0, 2.0, 3.0])).sum().backward()
    np.testing.assert_array_equal(a.grad, [1, 2])
    np.testing.assert_array_equal(b.grad, [3])
    c, d = leaf([1.0, 1.0]), leaf([1.0, 1.0])
    T.stack([c, d], axis=1)[:, 1].sum().backward()
    assert c.grad is None or not c.grad.any()
    np.testing.assert_array_equal(d.grad, [1, 1])


def test_forward_is_bit_deterministic():
    rng = np.random.default_rng(3)
    a = rng.standard_normal((16, 16)).astype(np.float32)
    outs = [T.sigmoid(T.matmul(Tensor(a), Tensor(a))).sum().data.tobytes() for _ in range(3)]
    assert len(set(outs)) == 1


def test_independent_graphs_on_threads():
    """Separate graphs may be built and differentiated on separate threads."""
    results = {}

    def work(k):
        x = leaf(np.full(4, float(k)))
        (x * x).sum().backward()
        results[k] = x.grad.copy()

    threads = [threading.Thread(target=work, args=(k,)) for k in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    for k in range(4):
        np.testing.assert_array_equal(results[k], np.full(4, 2.0 * k))

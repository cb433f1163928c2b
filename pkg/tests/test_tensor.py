import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from svglp import tensor as T
from svglp.tensor import GraphConsumedError, Tensor

from oracles import central_diff, conv2d_loops, grad_error

finite = st.floats(-3, 3, allow_nan=False, allow_infinity=False)


def leaf(a):
    return Tensor(np.array(a, dtype=float), requires_grad=True)


def check_grad(build, *arrays_, tol=1e-4):
    """Compare backward against central differences for every input array."""
    leaves = [leaf(a) for a in arrays_]
    build(*leaves).backward()
    for lf in leaves:
        num = central_diff(lambda: build(*[Tensor(l.data) for l in leaves]).item(), lf.data)
        assert grad_error(lf.grad, num) < tol


class TestElementwise:
    def test_tanh_zero(self):
        assert np.array_equal(T.tanh(Tensor(np.zeros((2, 3)))).data, np.zeros((2, 3)))

    def test_sigmoid_zero(self):
        assert np.array_equal(T.sigmoid(Tensor(np.zeros(4))).data, np.full(4, 0.5))

    def test_mul(self):
        assert T.mul(Tensor([2.0, 3.0]), Tensor([4.0, 5.0])).data.tolist() == [8.0, 15.0]

    def test_shape_mismatch_reports_both_shapes(self):
        with pytest.raises(ValueError, match=r"\(2, 3\).*\(4,\)"):
            T.add(Tensor(np.ones((2, 3))), Tensor(np.ones(4)))

    def test_sigmoid_is_stable_at_extremes(self):
        out = T.sigmoid(Tensor([-800.0, 800.0])).data
        assert np.all(np.isfinite(out)) and out[0] == 0.0 and out[1] == 1.0

    def test_leaky_relu_slope(self):
        assert T.leaky_relu(Tensor([-1.0, 2.0])).data.tolist() == [-0.2, 2.0]

    @pytest.mark.parametrize("op", [T.tanh, T.sigmoid, T.leaky_relu, T.exp, T.square,
                                    lambda x: T.log(T.exp(x) + 1.0)])
    def test_unary_gradients(self, op, rng):
        check_grad(lambda x: T.sum_(op(x)), rng.normal(size=(3, 4)))

    @pytest.mark.parametrize("op", [T.add, T.sub, T.mul, T.div])
    def test_binary_broadcast_gradients(self, op, rng):
        b = rng.uniform(0.5, 2.0, size=(4,))
        check_grad(lambda x, y: T.sum_(op(x, y) * op(x, y)), rng.normal(size=(3, 4)), b)

    def test_broadcast_add_then_reduce_hand_case(self):
        out = T.sum_(Tensor([[1.0, 2.0], [3.0, 4.0]]) + Tensor([10.0, 20.0]))
        assert out.item() == 1 + 2 + 3 + 4 + 2 * 10 + 2 * 20

    def test_scalar_operands(self):
        x = leaf([1.0, 2.0])
        y = 3.0 - x * 2.0 + 1.0
        T.sum_(y).backward()
        assert y.data.tolist() == [2.0, 0.0]
        assert x.grad.tolist() == [-2.0, -2.0]


class TestMatmul:
    def test_identity(self):
        m = np.array([[1.0, 2.0], [3.0, 4.0]])
        assert np.array_equal(T.matmul(Tensor(np.eye(2)), Tensor(m)).data, m)

    def test_dot(self):
        assert T.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]])).data.tolist() == [[11.0]]

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_gradient_of_sum_product(self, rng):
        check_grad(lambda a, b: T.sum_(T.matmul(a, b)), rng.normal(size=(3, 4)), rng.normal(size=(4, 2)))

    def test_backward_formula(self, rng):
        a, b = leaf(rng.normal(size=(3, 4))), leaf(rng.normal(size=(4, 2)))
        g = rng.normal(size=(3, 2))
        T.sum_(T.matmul(a, b) * Tensor(g)).backward()
        assert np.allclose(a.grad, g @ b.data.T, atol=1e-12)
        assert np.allclose(b.grad, a.data.T @ g, atol=1e-12)


class TestConv:
    def test_unit_kernel_is_identity(self, rng):
        x = rng.normal(size=(2, 1, 5, 5))
        assert np.array_equal(T.conv2d(Tensor(x), Tensor(np.ones((1, 1, 1, 1)))).data, x)

    def test_ones_kernel_sums_window(self):
        out = T.conv2d(Tensor(np.ones((1, 1, 5, 5))), Tensor(np.ones((1, 1, 3, 3))))
        assert np.array_equal(out.data, np.full((1, 1, 3, 3), 9.0))

    def test_non_integer_extent_rejected(self):
        with pytest.raises(ValueError):
            T.conv2d(Tensor(np.ones((1, 1, 5, 5))), Tensor(np.ones((1, 1, 2, 2))), stride=2)

    @pytest.mark.parametrize("stride,padding,k,size", [(1, 0, 2, 4), (2, 1, 4, 8), (1, 1, 3, 6), (1, 0, 4, 4)])
    def test_matches_loop_reference(self, rng, stride, padding, k, size):
        x = rng.normal(size=(2, 3, size, size))
        w = rng.normal(size=(4, 3, k, k))
        assert np.allclose(T.conv2d(Tensor(x), Tensor(w), stride, padding).data,
                           conv2d_loops(x, w, stride, padding), atol=1e-12)

    def test_small_gradient_check(self, rng):
        check_grad(lambda x, w: T.sum_(T.square(T.conv2d(x, w))),
                   rng.normal(size=(2, 1, 4, 4)), rng.normal(size=(3, 1, 2, 2)))

    def test_strided_padded_gradient_check(self, rng):
        check_grad(lambda x, w: T.sum_(T.tanh(T.conv2d(x, w, 2, 1))),
                   rng.normal(size=(2, 2, 6, 6)), rng.normal(size=(3, 2, 4, 4)))

    def test_no_kernel_flip(self):
        x = np.zeros((1, 1, 3, 3))
        x[0, 0, 0, 0] = 1.0
        w = np.arange(4.0).reshape(1, 1, 2, 2)
        assert T.conv2d(Tensor(x), Tensor(w)).data[0, 0, 0, 0] == 0.0


class TestUpsample:
    def test_single_pixel(self):
        assert T.upsample2x(Tensor(np.ones((1, 1, 1, 1)))).data.tolist() == [[[[1.0, 1.0], [1.0, 1.0]]]]

    @given(arrays(np.float64, (2, 3, 3, 2), elements=finite))
    def test_sum_is_quadrupled(self, x):
        assert np.isclose(T.upsample2x(Tensor(x)).data.sum(), 4 * x.sum(), atol=1e-9)

    def test_gradient(self, rng):
        check_grad(lambda x: T.sum_(T.square(T.upsample2x(x)) * 0.5), rng.normal(size=(1, 2, 3, 3)))


class TestShapeOps:
    def test_concat_getitem_reshape_gradients(self, rng):
        def build(a, b):
            c = T.concat([a, b], axis=1)
            return T.sum_(T.square(c[:, 1:4].reshape(6)))
        check_grad(build, rng.normal(size=(2, 2)), rng.normal(size=(2, 3)))

    def test_stack_mean_transpose(self, rng):
        check_grad(lambda a, b: T.mean(T.square(T.transpose(T.stack([a, b])[1]))),
                   rng.normal(size=(2, 3)), rng.normal(size=(2, 3)))

    def test_sum_axis(self, rng):
        check_grad(lambda a: T.sum_(T.square(T.sum_(a, axis=1))), rng.normal(size=(3, 4)))


class TestBackward:
    def test_sum_gives_ones(self):
        x = leaf(np.arange(6.0).reshape(2, 3))
        T.sum_(x).backward()
        assert np.array_equal(x.grad, np.ones((2, 3)))

    def test_square(self):
        x = leaf([1.0, 2.0])
        T.sum_(T.square(x)).backward()
        assert x.grad.tolist() == [2.0, 4.0]

    def test_non_scalar_loss_rejected(self):
        with pytest.raises(ValueError):
            (leaf([1.0, 2.0]) * 2.0).backward()

    def test_second_backward_on_same_graph_rejected(self):
        x = leaf([1.0, 2.0])
        loss = T.sum_(T.square(x))
        loss.backward()
        with pytest.raises(GraphConsumedError):
            loss.backward()

    def test_shared_interior_node_visited_once(self):
        x = leaf([3.0])
        y = x * x
        (y + y).backward()
        assert x.grad.tolist() == [12.0]

    def test_fresh_graphs_accumulate_into_leaves(self):
        x = leaf([1.0])
        T.sum_(x * 2.0).backward()
        T.sum_(x * 3.0).backward()
        assert x.grad.tolist() == [5.0]
        T.zero_grad([x])
        assert x.grad is None

    def test_composite_conv_tanh_linear(self, rng):
        def build(x, w, m):
            h = T.tanh(T.conv2d(x, w, 2, 1)).reshape(2, 8)
            return T.sum_(T.matmul(h, m))
        check_grad(build, rng.normal(size=(2, 1, 4, 4)), rng.normal(size=(2, 1, 4, 4)),
                   rng.normal(size=(8, 3)))

    def test_no_grad_records_nothing(self):
        x = leaf([1.0])
        with T.no_grad():
            y = x * 2.0
        assert not y.requires_grad and y._parents == ()

    def test_forward_is_pure(self, rng):
        x, w = rng.normal(size=(2, 3, 8, 8)), rng.normal(size=(4, 3, 3, 3))
        a = T.conv2d(Tensor(x), Tensor(w), 1, 1).data
        b = T.conv2d(Tensor(x), Tensor(w), 1, 1).data
        assert a.tobytes() == b.tobytes()


@given(arrays(np.float64, (3, 4), elements=finite), arrays(np.float64, (4,), elements=finite))
def test_broadcast_add_gradient_reduces_over_leading_axis(a, b):
    x, y = leaf(a), leaf(b)
    T.sum_(x + y).backward()
    assert np.array_equal(x.grad, np.ones((3, 4)))
    assert np.array_equal(y.grad, np.full(4, 3.0))

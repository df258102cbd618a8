import numpy as np
import pytest

from phymotion import tensor as T
from phymotion.errors import ContractError, ShapeError
from phymotion.gradcheck import check_grad
from phymotion.tensor import Tensor


def test_layer_norm_of_constant_is_zero():
    x = Tensor(np.full((3, 7), 2.5, dtype=np.float32))
    np.testing.assert_array_equal(T.layer_norm(x).data, np.zeros((3, 7), dtype=np.float32))


def test_gelu_zero():
    assert T.gelu(Tensor(np.zeros(4))).data.tolist() == [0.0] * 4


def test_mse_identity():
    x = Tensor(np.random.default_rng(0).standard_normal((5, 3)))
    assert T.mse(x, x).item() == 0.0


def test_layer_norm_row_statistics():
    rng = np.random.default_rng(1)
    x = Tensor((rng.standard_normal((50, 64)) * 3 + 7).astype(np.float32))
    y = T.layer_norm(x).data.astype(np.float64)
    assert np.abs(y.mean(axis=1)).max() < 1e-5
    assert np.abs(y.var(axis=1) - 1.0).max() < 1e-3


def test_linear_map_gradient_is_broadcast_input():
    x = np.array([1.0, -2.0, 0.5])
    w = Tensor(np.ones((3, 4)), requires_grad=True)
    loss = (Tensor(x) @ w).sum()
    loss.backward()
    np.testing.assert_allclose(w.grad, np.repeat(x[:, None], 4, axis=1))


def test_gradients_accumulate_across_backward_calls():
    rng = np.random.default_rng(2)
    w = Tensor(rng.standard_normal((3, 3)), requires_grad=True)
    loss = T.tanh(Tensor(rng.standard_normal((2, 3))) @ w).sum()
    loss.backward()
    first = w.grad.copy()
    loss.backward()
    np.testing.assert_array_equal(w.grad, 2 * first)


def test_backward_on_non_scalar_is_contract_error():
    w = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ContractError):
        (w * 2.0).backward()


def test_shape_errors_name_both_shapes():
    a, b = Tensor(np.ones((2, 3))), Tensor(np.ones((4, 5)))
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
        T.matmul(a, b)
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
        a + b
    with pytest.raises(ShapeError):
        T.concat([a, b], axis=0)


def test_no_grad_records_nothing():
    w = Tensor(np.ones(3), requires_grad=True)
    with T.no_grad():
        y = (w * 3.0).sum()
    assert y._parents == ()


def test_float32_storage_follows_input():
    x = Tensor(np.ones((2, 2), dtype=np.float32))
    assert (T.gelu(x) @ x).dtype == np.float32
    assert T.layer_norm(x).dtype == np.float32
    assert x.sum().dtype == np.float32


RNG = np.random.default_rng(1234)
LABELS = np.array([0, 2, 1, 2])

# (name, builder, input arrays); every builder returns a scalar
PRIMITIVES = [
    ("matmul", lambda a, b: (a @ b).sum(), [RNG.standard_normal((3, 4)), RNG.standard_normal((4, 2))]),
    ("batched_matmul", lambda a, b: ((a @ b) ** 2).sum(), [RNG.standard_normal((2, 3, 4)), RNG.standard_normal((4, 2))]),
    ("add_broadcast", lambda a, b: ((a + b) ** 2).sum(), [RNG.standard_normal((3, 4)), RNG.standard_normal(4)]),
    ("sub", lambda a, b: ((a - b) ** 3).sum(), [RNG.standard_normal((3, 1)), RNG.standard_normal((1, 4))]),
    ("mul", lambda a, b: (a * b).sum(), [RNG.standard_normal((3, 4)), RNG.standard_normal((3, 4))]),
    ("div", lambda a, b: (a / b).sum(), [RNG.standard_normal((3, 4)), RNG.uniform(1.0, 2.0, (3, 4))]),
    ("tanh", lambda a: (T.tanh(a) * T.tanh(a)).sum(), [RNG.standard_normal((3, 4))]),
    ("gelu", lambda a: (T.gelu(a) ** 2).sum(), [RNG.standard_normal((3, 4)) * 2]),
    ("exp", lambda a: T.exp(a).sum(), [RNG.standard_normal((3, 4))]),
    ("log", lambda a: T.log(a).sum(), [RNG.uniform(0.5, 2.0, (3, 4))]),
    ("sqrt", lambda a: T.sqrt(a).sum(), [RNG.uniform(0.5, 2.0, (3, 4))]),
    ("layer_norm", lambda a: (T.layer_norm(a) * Tensor(np.arange(12.0).reshape(3, 4))).sum(), [RNG.standard_normal((3, 4))]),
    ("softmax", lambda a: (T.softmax(a) * Tensor(np.arange(12.0).reshape(3, 4))).sum(), [RNG.standard_normal((3, 4))]),
    ("log_softmax", lambda a: (T.log_softmax(a) * Tensor(np.arange(12.0).reshape(3, 4))).sum(), [RNG.standard_normal((3, 4))]),
    ("mean_axis", lambda a: (a.mean(axis=0) ** 2).sum(), [RNG.standard_normal((3, 4))]),
    ("sum_keepdims", lambda a: (a.sum(axis=1, keepdims=True) * a).sum(), [RNG.standard_normal((3, 4))]),
    ("mse", lambda a, b: T.mse(a, b), [RNG.standard_normal((3, 4)), RNG.standard_normal((3, 4))]),
    ("cross_entropy", lambda a: T.cross_entropy(a, LABELS), [RNG.standard_normal((4, 3))]),
    ("concat", lambda a, b: (T.concat([a, b], axis=1) ** 2 * Tensor(np.arange(15.0).reshape(3, 5))).sum(), [RNG.standard_normal((3, 2)), RNG.standard_normal((3, 3))]),
    ("slice", lambda a: (a[1:, ::2] ** 2).sum() + (a[[0, 0, 2]] ** 3).sum(), [RNG.standard_normal((3, 4))]),
    ("reshape_swap", lambda a: (a.reshape(2, 6).swapaxes(0, 1) @ Tensor(np.arange(2.0))).sum() ** 2, [RNG.standard_normal((3, 4))]),
    ("stack", lambda a, b: (T.stack([a, b]) ** 2).sum(), [RNG.standard_normal(3), RNG.standard_normal(3)]),
]


@pytest.mark.parametrize("name,build,arrays", PRIMITIVES, ids=[p[0] for p in PRIMITIVES])
def test_primitive_gradients_match_finite_differences(name, build, arrays):
    assert check_grad(build, arrays) < 1e-4


UNARY = [T.tanh, T.gelu, lambda x: x * x, lambda x: T.layer_norm(x), lambda x: T.softmax(x), lambda x: x * 0.5 + 1.0]


def random_graph(seed, depth):
    """Compose random unary/binary ops on two inputs into a scalar."""
    rng = np.random.default_rng(seed)
    plan = [(int(rng.integers(0, 3)), int(rng.integers(0, len(UNARY)))) for _ in range(depth)]
    w = rng.standard_normal((4, 4)) * 0.5

    def build(x, y):
        h = x
        for kind, u in plan:
            if kind == 0:
                h = UNARY[u](h)
            elif kind == 1:
                h = h @ Tensor(w)
            else:
                h = h * y + h
        return (h * h).sum()

    return build, [rng.standard_normal((3, 4)), rng.standard_normal((3, 4))]


@pytest.mark.parametrize("seed", range(12))
def test_random_graphs_up_to_depth_8(seed):
    build, arrays = random_graph(seed, depth=1 + seed % 8)
    assert check_grad(build, arrays) < 1e-4


def test_shared_subexpression_visited_once():
    x = Tensor(np.array([2.0]), requires_grad=True)
    y = x * x
    z = y + y + y
    z.sum().backward()
    np.testing.assert_allclose(x.grad, [12.0])


def test_forward_backward_bitwise_deterministic():
    def run():
        rng = np.random.default_rng(5)
        w = Tensor(rng.standard_normal((8, 8)).astype(np.float32), requires_grad=True)
        x = Tensor(rng.standard_normal((4, 8)).astype(np.float32))
        loss = T.gelu(T.layer_norm(x @ w)).sum()
        loss.backward()
        return loss.data.tobytes(), w.grad.tobytes()

    assert run() == run()

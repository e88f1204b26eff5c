import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from valid_testgen.autodiff import Graph, as_tensor, finite_difference_gradient, softmax
from valid_testgen.errors import ContractViolation, NumericError, ShapeError


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))))


def test_as_tensor_rejects_non_finite_and_bad_shape():
    with pytest.raises(NumericError):
        as_tensor([1.0, np.nan])
    with pytest.raises(ShapeError):
        as_tensor([1.0, 2.0, 3.0], shape=(2, 2))
    tensor = as_tensor([1.0, 2.0, 3.0, 4.0], shape=(2, 2))
    assert tensor.shape == (2, 2)
    assert not tensor.flags.writeable


def test_forward_arithmetic():
    graph = Graph()
    root = graph.add(graph.mul(graph.input(2.0), graph.constant(3.0)), graph.constant(1.0))
    assert graph.forward(root) == 7.0


def test_forward_relu_of_negative():
    graph = Graph()
    assert graph.forward(graph.relu(graph.input(-5.0))) == 0.0


def test_gaussian_log_density_at_mean():
    graph = Graph()
    root = graph.gaussian_log_density(graph.input([0.0]), graph.constant([0.0]), graph.constant([1.0]))
    assert graph.forward(root) == pytest.approx(-0.9189385332046727, abs=1e-12)


def test_gaussian_log_density_matches_scipy():
    rng = np.random.default_rng(3)
    x, mu = rng.normal(size=5), rng.normal(size=5)
    sigma = rng.uniform(0.1, 2.0, size=5)
    graph = Graph()
    root = graph.gaussian_log_density(graph.input(x), graph.constant(mu), graph.constant(sigma))
    assert graph.forward(root) == pytest.approx(stats.norm.logpdf(x, mu, sigma).sum(), rel=1e-12)


def test_shape_mismatch_names_both_shapes():
    graph = Graph()
    with pytest.raises(ShapeError) as exc_info:
        graph.add(graph.input(np.zeros(3)), graph.input(np.zeros(2)))
    assert "(3,)" in str(exc_info.value) and "(2,)" in str(exc_info.value)


def test_take_out_of_range_is_shape_error():
    graph = Graph()
    x = graph.input(np.zeros((2, 2)))
    with pytest.raises(ShapeError):
        graph.take(x, (5, 0))
    with pytest.raises(ShapeError):
        graph.take(x, (1,))
    with pytest.raises(ShapeError):
        graph.take(x, 4)
    assert graph.forward(graph.take(x, (1, 1))) == 0.0


def test_backward_power_rule():
    graph = Graph()
    x = graph.input(3.0)
    assert graph.backward(graph.square(x), x) == pytest.approx(6.0)


def test_relu_subgradient():
    graph = Graph()
    x = graph.input(-1.0)
    assert graph.backward(graph.relu(x), x) == 0.0
    graph = Graph()
    x = graph.input(0.0)
    assert graph.backward(graph.relu(x), x) == 0.0


def test_backward_needs_scalar_root():
    graph = Graph()
    x = graph.input([1.0, 2.0])
    with pytest.raises(ContractViolation):
        graph.backward(x, x)
    with pytest.raises(ContractViolation):
        graph.forward(x)


def test_forward_rejects_non_finite_objective():
    graph = Graph()
    root = graph.exp(graph.input(1000.0))
    with pytest.raises(NumericError):
        graph.forward(root)


def test_log_of_non_positive_is_numeric_error():
    graph = Graph()
    with pytest.raises(NumericError):
        graph.log(graph.input(0.0))


def test_finite_difference_examples():
    assert finite_difference_gradient(lambda x: float(x**2), 3.0) == pytest.approx(6.0, abs=1e-6)
    x = np.array([[0.3, -1.2], [4.0, 0.0]])
    assert np.allclose(finite_difference_gradient(lambda v: float(v.sum()), x), np.ones_like(x))
    with pytest.raises(ContractViolation):
        finite_difference_gradient(lambda v: float(v.sum()), x, h=0.0)
    with pytest.raises(NumericError):
        finite_difference_gradient(lambda v: float("nan"), x)


def test_softmax_is_stable_and_normalised():
    probs = softmax(np.array([1000.0, 1000.0, -1000.0]))
    assert np.all(np.isfinite(probs))
    assert probs.sum() == pytest.approx(1.0)
    assert probs[0] == pytest.approx(0.5)


# Each builder maps a graph and an input node to a scalar objective.
OP_KINDS = {
    "add": lambda g, x, c: g.reduce_sum(g.add(x, g.constant(c))),
    "sub": lambda g, x, c: g.reduce_sum(g.square(g.sub(g.constant(c), x))),
    "mul": lambda g, x, c: g.reduce_sum(g.mul(x, g.constant(c))),
    "scale": lambda g, x, c: g.reduce_sum(g.scale(g.square(x), -0.7)),
    "matmul": lambda g, x, c: g.reduce_sum(g.matmul(x, g.constant(np.outer(c, c[::-1])))),
    "transpose": lambda g, x, c: g.take(g.transpose(g.mul(g.constant(np.outer(c[:3], c)), x)), (1, 2)),
    "relu": lambda g, x, c: g.reduce_sum(g.mul(g.relu(x), g.constant(c))),
    "sigmoid": lambda g, x, c: g.reduce_sum(g.mul(g.sigmoid(x), g.constant(c))),
    "softplus": lambda g, x, c: g.reduce_sum(g.softplus(x)),
    "exp": lambda g, x, c: g.reduce_sum(g.exp(x)),
    "log": lambda g, x, c: g.reduce_sum(g.log(g.add(g.square(x), g.constant(1.0)))),
    "mean": lambda g, x, c: g.mean(g.mul(x, g.constant(c))),
    "take": lambda g, x, c: g.take(g.square(x), 1),
    "slice": lambda g, x, c: g.reduce_sum(g.square(g.slice_last(x, 1, 3))),
    "softmax": lambda g, x, c: g.take(g.softmax(x), 0),
    "cross_entropy": lambda g, x, c: g.softmax_cross_entropy(x, [2]),
    "gaussian": lambda g, x, c: g.gaussian_log_density(
        g.constant(c), g.scale(x, 0.5), g.add(g.softplus(x), g.constant(0.1))
    ),
}


@pytest.mark.parametrize("kind", sorted(OP_KINDS))
def test_backward_matches_finite_differences(kind):
    rng = np.random.default_rng(sorted(OP_KINDS).index(kind))
    build = OP_KINDS[kind]
    for _ in range(100):
        x0 = rng.uniform(-2.0, 2.0, size=4)
        # stay away from the relu kink
        x0 = np.where(np.abs(x0) < 1e-2, 0.5, x0)
        c = rng.uniform(-1.0, 1.0, size=4)

        def objective(x):
            graph = Graph()
            return graph.forward(build(graph, graph.input(x), c))

        graph = Graph()
        x_node = graph.input(x0)
        analytic = graph.backward(build(graph, x_node, c), x_node)
        assert rel_err(analytic, finite_difference_gradient(objective, x0)) <= 1e-4


def test_matrix_inputs_match_finite_differences():
    rng = np.random.default_rng(7)
    weights = rng.normal(size=(3, 4))
    x0 = rng.normal(size=(2, 3))

    def build(graph, x):
        hidden = graph.sigmoid(graph.matmul(x, graph.constant(weights)))
        return graph.reduce_sum(graph.reduce_sum(hidden, axis=1))

    def objective(x):
        graph = Graph()
        return graph.forward(build(graph, graph.input(x)))

    graph = Graph()
    x = graph.input(x0)
    assert rel_err(graph.backward(build(graph, x), x), finite_difference_gradient(objective, x0)) <= 1e-4


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=3, max_size=3))
def test_backward_is_linear(values):
    x0 = np.array(values)

    def grads(builders):
        graph = Graph()
        x = graph.input(x0)
        nodes = [build(graph, x) for build in builders]
        root = nodes[0]
        for node in nodes[1:]:
            root = graph.add(root, node)
        return graph.backward(root, x)

    first = lambda g, x: g.reduce_sum(g.sigmoid(x))
    second = lambda g, x: g.reduce_sum(g.square(x))
    assert np.allclose(grads([first, second]), grads([first]) + grads([second]), atol=1e-12, rtol=0)


def test_forward_is_deterministic():
    x0 = np.random.default_rng(11).normal(size=6)

    def evaluate():
        graph = Graph()
        return graph.forward(graph.reduce_sum(graph.softplus(graph.input(x0))))

    assert evaluate() == evaluate()

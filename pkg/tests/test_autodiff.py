import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from orderdisent.autodiff import (
    Graph, NonFiniteError, ShapeError, UnboundLeafError, AutodiffError,
    evaluate, finite_difference_check, gradients,
)


def _affine_graph():
    g = Graph()
    out = g.affine(g.input("x"), g.param("W"), g.param("b"))
    return g, out


def test_affine_identity():
    g, out = _affine_graph()
    v = evaluate(g, {"x": np.array([1.0, 2.0]), "W": np.eye(2), "b": np.zeros(2)})
    np.testing.assert_array_equal(v[out], [1.0, 2.0])


def test_softmax_of_zeros_is_uniform():
    g = Graph()
    s = g.softmax(g.input("z"))
    np.testing.assert_allclose(evaluate(g, {"z": np.zeros(2)})[s], [0.5, 0.5])


def test_cross_entropy_uniform_is_ln2():
    g = Graph()
    ce = g.scale(g.sum(g.mul(g.input("y"), g.log(g.softmax(g.input("z"))))), -1.0)
    for y in ([1.0, 0.0], [0.0, 1.0]):
        assert evaluate(g, {"z": np.zeros(2), "y": np.array(y)})[ce] == pytest.approx(np.log(2), abs=1e-12)


def test_sum_of_squares_gradient():
    g = Graph()
    x = g.param("x")
    loss = g.sum(g.mul(x, x))
    grads = gradients(g, loss, {"x": np.array([1.0, -2.0, 3.0])}, {"x"})
    np.testing.assert_array_equal(grads["x"], [2.0, -4.0, 6.0])


def _softmax_ce_graph():
    g = Graph()
    z = g.param("z")
    loss = g.scale(g.sum(g.mul(g.input("y"), g.log(g.softmax(z)))), -1.0)
    return g, loss


def test_softmax_cross_entropy_logit_gradient():
    # d/dz of -log softmax(z)[0] = softmax(z) - onehot(0) = (0.5 - 1, 0.5)
    g, loss = _softmax_ce_graph()
    b = {"z": np.zeros(2), "y": np.array([1.0, 0.0])}
    np.testing.assert_allclose(gradients(g, loss, b, {"z"})["z"], [-0.5, 0.5], atol=1e-15)
    assert finite_difference_check(g, loss, b, h=1e-5) < 1e-8


def _two_layer(rng, n=5, d=4, h=6, k=3):
    # fan-in scaled weights: saturated softmax gives ~1e-8 gradients that central differences cannot resolve
    g = Graph()
    hid = g.relu(g.affine(g.input("x"), g.param("W0"), g.param("b0")))
    p = g.softmax(g.affine(hid, g.param("W1"), g.param("b1")))
    loss = g.scale(g.sum(g.mul(g.input("y"), g.log(p))), -1.0 / n)
    b = {
        "x": rng.standard_normal((n, d)),
        "W0": rng.standard_normal((d, h)) / np.sqrt(d),
        "b0": rng.standard_normal(h) * 0.1,
        "W1": rng.standard_normal((h, k)) / np.sqrt(h),
        "b1": np.zeros(k),
        "y": np.eye(k)[rng.integers(0, k, n)],
    }
    return g, loss, b


def test_random_two_layer_networks_match_finite_differences():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(100):
        g, loss, b = _two_layer(rng)
        worst = max(worst, finite_difference_check(g, loss, b, h=1e-5))
    assert worst < 1e-4


def test_quadratic_is_exact():
    g = Graph()
    x = g.param("x")
    c = g.sub(x, g.input("c"))
    loss = g.sum(g.mul(c, c))
    b = {"x": np.array([0.3, -1.2, 2.0]), "c": np.array([1.0, 0.0, -1.0])}
    assert finite_difference_check(g, loss, b, h=1e-5) < 1e-8


def test_relu_kink_avoided_by_preperturbing():
    g = Graph()
    x = g.param("x")
    loss = g.sum(g.mul(g.relu(x), g.input("w")))
    b = {"x": np.array([0.0, -0.5, 0.0, 1.0]) + 1e-3, "w": np.array([1.0, 2.0, -3.0, 0.5])}
    assert finite_difference_check(g, loss, b, h=1e-5) < 1e-4


def test_zero_step_rejected():
    g = Graph()
    x = g.param("x")
    loss = g.sum(x)
    with pytest.raises(ValueError):
        finite_difference_check(g, loss, {"x": np.ones(2)}, h=0.0)


def test_errors():
    g, out = _affine_graph()
    with pytest.raises(UnboundLeafError):
        evaluate(g, {"x": np.ones(2), "W": np.eye(2)})
    with pytest.raises(ShapeError):
        evaluate(g, {"x": np.ones(3), "W": np.eye(2), "b": np.zeros(2)})
    with pytest.raises(ShapeError):
        gradients(g, out, {"x": np.ones(2), "W": np.eye(2), "b": np.zeros(2)}, {"W"})
    with pytest.raises(AutodiffError):
        gradients(g, out, {"x": np.ones(2), "W": np.eye(2), "b": np.zeros(2)}, {"nope"})

    g2 = Graph()
    bad = g2.scale(g2.input("x"), np.inf)
    with pytest.raises(NonFiniteError):
        evaluate(g2, {"x": np.ones(1)})
    assert bad == 1


def test_empty_wrt_returns_empty_map():
    rng = np.random.default_rng(1)
    g, loss, b = _two_layer(rng)
    before = {k: v.copy() for k, v in b.items()}
    assert gradients(g, loss, b, set()) == {}
    assert all(np.array_equal(before[k], b[k]) for k in b)


def test_wrt_subset_only():
    rng = np.random.default_rng(2)
    g, loss, b = _two_layer(rng)
    grads = gradients(g, loss, b, {"W1", "b1"})
    assert set(grads) == {"W1", "b1"}
    assert grads["W1"].shape == b["W1"].shape


def test_shared_subexpression_accumulates():
    g = Graph()
    x = g.param("x")
    y = g.mul(x, x)
    loss = g.sum(g.add(y, y))  # 2 x^2
    grads = gradients(g, loss, {"x": np.array([1.5, -0.5])}, {"x"})
    np.testing.assert_array_equal(grads["x"], [6.0, -2.0])


def test_evaluate_is_bitwise_repeatable():
    rng = np.random.default_rng(3)
    g, loss, b = _two_layer(rng)
    v1, v2 = evaluate(g, b), evaluate(g, b)
    assert all(np.array_equal(a, c) for a, c in zip(v1, v2))


def test_hinge_subgradient_at_zero_is_zero():
    g = Graph()
    x = g.param("x")
    loss = g.sum(g.hinge(x))
    grads = gradients(g, loss, {"x": np.array([0.0, 1.0, -1.0])}, {"x"})
    np.testing.assert_array_equal(grads["x"], [0.0, 1.0, 0.0])


def test_log_clamps_probabilities():
    g = Graph()
    out = g.log(g.input("p"))
    v = evaluate(g, {"p": np.array([0.0, 1.0])})[out]
    np.testing.assert_allclose(v, [np.log(1e-7), np.log(1 - 1e-7)])


PRIMITIVES = {
    "affine": lambda g, a, b: g.affine(a, b, g.param("bias")),
    "relu": lambda g, a, b: g.relu(a),
    "softmax": lambda g, a, b: g.softmax(a),
    "log": lambda g, a, b: g.log(g.softmax(a)),
    "mean": lambda g, a, b: g.mean(a),
    "add": lambda g, a, b: g.add(a, g.param("c")),
    "sub": lambda g, a, b: g.sub(a, g.param("c")),
    "mul": lambda g, a, b: g.mul(a, g.param("c")),
    "scale": lambda g, a, b: g.scale(a, -1.7),
    "sqdist": lambda g, a, b: g.sqdist(a, g.param("c")),
    "hinge": lambda g, a, b: g.hinge(a),
    "concat": lambda g, a, b: g.concat(a, g.param("c")),
    "sum_axis": lambda g, a, b: g.sum(a, axis=-1),
}


def _away_from_kinks(v):
    # keep |v| >= 0.05 so ReLU/hinge stay differentiable under h=1e-5
    return np.where(np.abs(v) < 0.05, 0.05 * np.sign(v + 1e-12), v)


@pytest.mark.parametrize("prim", sorted(PRIMITIVES))
@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_primitive_gradients_match_finite_differences(prim, seed):
    rng = np.random.default_rng(seed)
    g = Graph()
    a = g.param("a")
    out = PRIMITIVES[prim](g, a, g.param("w"))
    loss = g.sum(g.mul(out, g.input("r")))
    bind = {
        "a": _away_from_kinks(rng.standard_normal((3, 4))),
        "w": rng.standard_normal((4, 2)),
        "bias": rng.standard_normal(2),
        "c": rng.standard_normal((3, 4)),
    }
    shape = evaluate(g, {**bind, "r": np.zeros(1)})[out].shape
    bind["r"] = rng.standard_normal(shape)
    assert finite_difference_check(g, loss, bind, h=1e-5) < 1e-4


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), a=st.floats(-3, 3), b=st.floats(-3, 3))
def test_gradient_is_linear_in_the_loss(seed, a, b):
    rng = np.random.default_rng(seed)
    g, l1, bind = _two_layer(rng)
    l2 = g.sum(g.mul(g.param("W1"), g.param("W1")))
    combo = g.add(g.scale(l1, a), g.scale(l2, b))
    wrt = {"W0", "b0", "W1", "b1"}
    g1, g2, gc = (gradients(g, n, bind, wrt) for n in (l1, l2, combo))
    for k in wrt:
        np.testing.assert_allclose(gc[k], a * g1[k] + b * g2[k], rtol=0, atol=1e-10)

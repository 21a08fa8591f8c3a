import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from bcnn_ctn import tensor as T
from bcnn_ctn.gradcheck import check_gradients, numeric_gradient, relative_error, run_suite
from bcnn_ctn.tensor import GradTape, NonFiniteError, ShapeError, Tensor

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def test_backward_matches_hand_derivative():
    # f(x) = sum(x * x) + 3 * sum(x)  ->  df/dx = 2x + 3
    x = Tensor(np.array([1.0, -2.0, 0.5]))
    with GradTape({"x": x}) as tape:
        loss = T.add(T.sum(T.square(x)), T.scale(T.sum(x), 3.0))
    g = tape.backward(loss)["x"]
    np.testing.assert_allclose(g, 2 * x.data + 3)


def test_fanout_accumulates():
    x = Tensor(np.array([2.0]))
    with GradTape({"x": x}) as tape:
        loss = T.sum(T.mul(x, x))  # x used twice
    assert tape.backward(loss)["x"][0] == pytest.approx(4.0)


def test_unreachable_param_gets_zero_grad():
    x, y = Tensor(np.ones(3)), Tensor(np.ones((2, 2)))
    with GradTape({"x": x, "y": y}) as tape:
        loss = T.sum(x)
    g = tape.backward(loss)
    np.testing.assert_array_equal(g["y"], np.zeros((2, 2)))


def test_backward_needs_scalar():
    x = Tensor(np.ones(3))
    with GradTape({"x": x}) as tape:
        out = T.scale(x, 2.0)
    with pytest.raises(ShapeError):
        tape.backward(out)


def test_no_tape_records_nothing():
    x = Tensor(np.ones(2), requires_grad=True)
    assert not T.relu(x).requires_grad


def test_non_finite_raises():
    with pytest.raises(NonFiniteError):
        T.log(Tensor(np.array([0.0])))
    assert T.log(Tensor(np.array([0.0])), floor=1e-12).item() == pytest.approx(np.log(1e-12))


def test_shape_mismatch_raises():
    with pytest.raises(ShapeError):
        T.add(Tensor(np.ones(3)), Tensor(np.ones(4)))
    with pytest.raises(ShapeError):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_conv2d_against_direct_loops(rng):
    x = rng.normal(size=(2, 3, 5, 6))
    w = rng.normal(size=(4, 3, 3, 3))
    b = rng.normal(size=4)
    out = T.conv2d(Tensor(x), Tensor(w), stride=2, padding=1, bias=Tensor(b)).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros_like(out)
    for n in range(2):
        for o in range(4):
            for i in range(out.shape[2]):
                for j in range(out.shape[3]):
                    ref[n, o, i, j] = (xp[n, :, 2 * i:2 * i + 3, 2 * j:2 * j + 3] * w[o]).sum() + b[o]
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_conv2d_single_image_shape(rng):
    out = T.conv2d(Tensor(rng.normal(size=(3, 8, 8))), Tensor(rng.normal(size=(5, 3, 3, 3))), padding=1)
    assert out.shape == (5, 8, 8)


def test_max_pool_and_gap():
    x = np.arange(16.0).reshape(1, 1, 4, 4)
    np.testing.assert_array_equal(T.max_pool2d(Tensor(x), 2).data[0, 0], [[5, 7], [13, 15]])
    assert T.global_avg_pool(Tensor(x)).data[0, 0] == pytest.approx(7.5)


def test_signed_sqrt_values():
    x = Tensor(np.array([-4.0, 0.0, 9.0]))
    np.testing.assert_array_equal(T.signed_sqrt(x).data, [-2.0, 0.0, 3.0])
    with GradTape({"x": x}) as tape:
        loss = T.sum(T.signed_sqrt(x))
    np.testing.assert_allclose(tape.backward(loss)["x"], [0.25, 0.0, 1 / 6])


def test_dropout_inference_identity_and_scaling(rng):
    x = Tensor(np.ones(10000))
    assert T.dropout(x, 0.5, rng, training=False) is x
    y = T.dropout(x, 0.5, rng, training=True).data
    assert set(np.unique(y)) <= {0.0, 2.0}
    assert abs(y.mean() - 1.0) < 0.05


@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 6)), elements=finite))
def test_softmax_rows_are_distributions(x):
    p = T.softmax(Tensor(x)).data
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
    assert (p >= 0).all()


@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 6)), elements=finite))
def test_l2_normalize_unit_or_zero(x):
    y = T.l2_normalize(Tensor(x)).data
    norms = np.linalg.norm(y, axis=1)
    nonzero = np.linalg.norm(x, axis=1) > 1e-6
    np.testing.assert_allclose(norms[nonzero], 1.0, atol=1e-9)


def test_numeric_gradient_of_quadratic():
    x = np.array([1.0, 2.0])
    g = numeric_gradient(lambda: Tensor(np.array([(x ** 2).sum()])), x)
    np.testing.assert_allclose(g, 2 * x, atol=1e-8)
    assert relative_error(g, 2 * x) < 1e-8


def test_check_gradients_flags_a_wrong_backward():
    x = Tensor(np.array([0.3, -0.7]))

    def broken(v):
        return T._make(v.data ** 3, (v,), lambda g: (g * 2 * v.data,), "cube")  # wrong: 3x^2

    errs = check_gradients(lambda: T.sum(broken(x)), {"x": x})
    assert errs["x"] > 1e-2


def test_gradcheck_suite_small():
    results = run_suite(trials=3, seed=5, include_network=False)
    bad = [(r.name, r.worst) for r in results if not r.passed]
    assert not bad

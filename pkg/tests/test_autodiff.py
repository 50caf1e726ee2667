"""Tape-based reverse-mode engine against hand math and finite differences."""
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dualinv import autodiff
from dualinv.errors import ContractError, NumericError


def test_sum_of_squares_gradient():
    tape = autodiff.Tape()
    x = tape.leaf(np.array([1.0, 2.0]))
    g = autodiff.grad(tape.sumsq(x))
    np.testing.assert_allclose(g[x], [2.0, 4.0], rtol=1e-14)


def test_euclidean_norm_gradient():
    tape = autodiff.Tape()
    x = tape.leaf(np.array([3.0, 4.0]))
    g = autodiff.grad(tape.norm2(x))
    np.testing.assert_allclose(g[x], [0.6, 0.8], rtol=1e-14)


def test_norm_gradient_guarded_at_origin():
    tape = autodiff.Tape()
    x = tape.leaf(np.zeros(4))
    g = autodiff.grad(tape.norm2(x))
    np.testing.assert_array_equal(g[x], np.zeros(4))


def test_grad_requires_scalar_output():
    tape = autodiff.Tape()
    x = tape.leaf(np.ones(3))
    with pytest.raises(ContractError):
        autodiff.grad(tape.tanh(x))


def test_non_finite_value_raises():
    tape = autodiff.Tape()
    x = tape.leaf(np.array([1e308]))
    with np.errstate(over="ignore"), pytest.raises(NumericError):
        tape.mul(x, x)


def _composite(tape, x_node, w1, w2):
    """A small tanh network ending in a norm: exercises every primitive
    the losses use."""
    h = tape.tanh(tape.matvec(tape.constant(w1), x_node))
    out = tape.matvec(tape.constant(w2), h)
    mixed = tape.add(tape.scale(out, 0.7),
                     tape.mul(out, tape.constant(np.full(out.value.shape, 0.1))))
    return tape.norm2(tape.sub(mixed, tape.constant(np.ones(mixed.value.shape))))


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=0, max_value=2**31 - 1))
def test_tape_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    w1 = rng.standard_normal((5, 4))
    w2 = rng.standard_normal((3, 5))
    x = rng.standard_normal(4)

    tape = autodiff.Tape()
    x_node = tape.leaf(x)
    g = autodiff.grad(_composite(tape, x_node, w1, w2))[x_node]

    def f(v):
        t = autodiff.Tape()
        return _composite(t, t.leaf(v), w1, w2).value

    fd = autodiff.finite_diff_grad(f, x)
    np.testing.assert_allclose(g, fd, rtol=2e-5, atol=2e-7)


def test_concat_dot_sqrt_gradients():
    rng = np.random.default_rng(7)
    a = rng.standard_normal(3)
    b = rng.standard_normal(2)

    def build(tape, a_node, b_node):
        joined = tape.concat([a_node, b_node])
        return tape.sqrt(tape.add(tape.dot(joined, joined),
                                  tape.constant(np.asarray(1.0))))

    tape = autodiff.Tape()
    a_node, b_node = tape.leaf(a), tape.leaf(b)
    grads = autodiff.grad(build(tape, a_node, b_node))

    def f_a(v):
        t = autodiff.Tape()
        return build(t, t.leaf(v), t.leaf(b)).value

    np.testing.assert_allclose(grads[a_node], autodiff.finite_diff_grad(f_a, a),
                               rtol=1e-6, atol=1e-9)


def test_finite_diff_rejects_non_finite_function():
    with pytest.raises(NumericError):
        autodiff.finite_diff_grad(lambda v: float("nan"), np.ones(2))

"""Finite-difference checks of every backward rule (64-bit)."""

import numpy as np
import pytest

from icereg import gradcheck


@pytest.mark.parametrize("name", [name for name, _ in gradcheck._op_check_suite()])
def test_op_gradient(name):
    checks = dict(gradcheck._op_check_suite())
    err = checks[name]()
    assert err < gradcheck.OP_THRESHOLD, f"{name}: max rel err {err:.3e}"


def test_mini_network_end_to_end_gradients():
    err = gradcheck.check_mini_network()
    assert err < gradcheck.NETWORK_THRESHOLD, f"max rel err {err:.3e}"


def test_numeric_gradient_of_quadratic():
    # sanity-check the checker itself against an analytic derivative
    f = lambda arrs: float((arrs[0] ** 2).sum())
    x = np.array([1.0, -2.0, 3.0])
    (g,) = gradcheck.numeric_gradients(f, [x])
    np.testing.assert_allclose(g, 2 * x, atol=1e-8)

"""Quadrature rules, Hermite polynomials, and correlated expectations."""

import math

import numpy as np
import pytest

from covflow.quadrature import (
    ORDER_CAP,
    QuadratureRule,
    expect_1d,
    expect_2d_correlated,
    hermite_eval,
    make_panel_rule,
    make_rule,
    mehler_moment,
)

RELU_MEAN = 1.0 / math.sqrt(2.0 * math.pi)


def double_factorial(n: int) -> int:
    out = 1
    while n > 1:
        out *= n
        n -= 2
    return out


class TestHermiteEval:
    def test_base_cases(self):
        assert hermite_eval(0, 3.7) == 1.0
        assert hermite_eval(1, 2.5) == 2.5
        assert hermite_eval(2, 2.0) == 3.0
        assert hermite_eval(3, 1.0) == -2.0

    def test_matches_recurrence_table(self):
        # He_4 = x^4 - 6x^2 + 3, He_5 = x^5 - 10x^3 + 15x
        x = np.linspace(-3, 3, 11)
        np.testing.assert_allclose(hermite_eval(4, x), x**4 - 6 * x**2 + 3, rtol=1e-13)
        np.testing.assert_allclose(hermite_eval(5, x), x**5 - 10 * x**3 + 15 * x, rtol=1e-13)

    def test_array_shape_preserved(self):
        x = np.zeros((3, 2))
        assert hermite_eval(6, x).shape == (3, 2)

    def test_negative_degree_rejected(self):
        with pytest.raises(ValueError):
            hermite_eval(-1, 0.0)


@pytest.mark.parametrize("order", [1, 2, 3, 8, 64, 128, 256, 512])
class TestRuleInvariants:
    def test_weights_sum_to_one(self, order):
        rule = make_rule(order)
        assert abs(rule.weights.sum() - 1.0) <= 1e-12

    def test_nodes_symmetric(self, order):
        rule = make_rule(order)
        np.testing.assert_allclose(rule.nodes, -rule.nodes[::-1], atol=1e-12)

    def test_first_two_moments(self, order):
        rule = make_rule(order)
        assert abs(float(rule.weights @ rule.nodes)) <= 1e-12
        if order >= 2:
            assert abs(float(rule.weights @ rule.nodes**2) - 1.0) <= 1e-10


class TestMakeRule:
    def test_order_cap(self):
        with pytest.raises(ValueError):
            make_rule(ORDER_CAP + 1)
        assert make_rule(ORDER_CAP + 1, cap=1024).order == ORDER_CAP + 1

    def test_order_positive(self):
        with pytest.raises(ValueError):
            make_rule(0)

    @pytest.mark.parametrize("order", [8, 16, 64])
    def test_exact_on_monomials(self, order):
        # Gaussian moments <z^d> = (d-1)!! for even d, 0 for odd d,
        # exact for degree <= 2*order - 1 up to rounding at the moment's
        # own magnitude scale (odd-degree sums cancel huge terms).
        rule = make_rule(order)
        for degree in range(2 * order):
            exact = float(double_factorial(degree - 1)) if degree % 2 == 0 else 0.0
            scale = float(double_factorial(degree - 1 if degree % 2 == 0 else degree))
            got = float(rule.weights @ rule.nodes**degree)
            assert abs(got - exact) <= 1e-9 * max(1.0, scale)

    def test_hermite_norm(self):
        rule = make_rule(64)
        got = expect_1d(lambda z: hermite_eval(2, z) ** 2, rule)
        assert abs(got - 2.0) <= 1e-10

    def test_negative_weights_rejected_by_type(self):
        with pytest.raises(ValueError):
            QuadratureRule(2, np.array([-1.0, 1.0]), np.array([0.5, -0.5]))


class TestPanelRule:
    def test_invariants(self):
        rule = make_panel_rule()
        assert abs(rule.weights.sum() - 1.0) <= 1e-12
        np.testing.assert_allclose(rule.nodes, -rule.nodes[::-1], atol=1e-12)
        assert abs(float(rule.weights @ rule.nodes**2) - 1.0) <= 1e-10

    def test_exact_on_kink(self):
        rule = make_panel_rule()
        assert abs(expect_1d(lambda z: np.maximum(z, 0.0), rule) - RELU_MEAN) <= 1e-14
        assert abs(expect_1d(lambda z: np.maximum(z, 0.0) ** 2, rule) - 0.5) <= 1e-14

    def test_bad_edges_rejected(self):
        with pytest.raises(ValueError):
            make_panel_rule(edges=(0.5, 1.0))
        with pytest.raises(ValueError):
            make_panel_rule(edges=(0.0, 1.0, 0.5))


class TestExpect1d:
    def test_odd_integrands_vanish(self):
        rule = make_rule(128)
        assert abs(expect_1d(lambda z: z, rule)) <= 1e-12
        assert abs(expect_1d(np.tanh, rule)) <= 1e-12

    def test_relu_mean_panel_rule(self):
        assert abs(expect_1d(lambda z: np.maximum(z, 0.0), make_panel_rule()) - RELU_MEAN) <= 1e-12

    def test_relu_mean_gauss_hermite_envelope(self):
        # The kink at 0 limits plain Gauss-Hermite to O(1/order) accuracy.
        err = abs(expect_1d(lambda z: np.maximum(z, 0.0), make_rule(128)) - RELU_MEAN)
        assert 1e-5 < err < 5e-3

    def test_linear_in_integrand(self):
        rule = make_rule(64)
        f = lambda z: np.tanh(z) ** 2
        g = lambda z: z**4
        combined = expect_1d(lambda z: 2.5 * f(z) - 0.5 * g(z), rule)
        assert abs(combined - (2.5 * expect_1d(f, rule) - 0.5 * expect_1d(g, rule))) <= 1e-12

    def test_non_finite_signalled(self):
        rule = make_rule(16)
        with pytest.raises(FloatingPointError):
            expect_1d(lambda z: 1.0 / (z - z[0]), rule)


class TestExpect2dCorrelated:
    def test_covariance_of_identity(self):
        got = expect_2d_correlated(lambda a, b: a * b, 0.5, make_rule(64))
        assert abs(got - 0.5) <= 1e-12

    def test_hermite_pair(self):
        got = expect_2d_correlated(
            lambda a, b: hermite_eval(2, a) * hermite_eval(2, b), 0.5, make_rule(64)
        )
        assert abs(got - 2.0 * 0.5**2) <= 1e-9

    def test_normalization(self):
        got = expect_2d_correlated(lambda a, b: np.ones_like(a), -0.9, make_rule(64))
        assert abs(got - 1.0) <= 1e-12

    @pytest.mark.parametrize("k", [1.0, -1.0])
    def test_degenerate_endpoint_matches_1d(self, k):
        rule = make_rule(64)
        f2 = expect_2d_correlated(lambda a, b: np.tanh(a) * np.tanh(b), k, rule)
        f1 = expect_1d(lambda z: np.tanh(z) * np.tanh(k * z), rule)
        assert abs(f2 - f1) <= 1e-12

    def test_out_of_range_correlation_rejected(self):
        with pytest.raises(ValueError):
            expect_2d_correlated(lambda a, b: a * b, 1.0 + 1e-9, make_rule(8))


class TestMehler:
    def test_closed_form_examples(self):
        assert mehler_moment(3, 3, 0.5) == pytest.approx(0.75, abs=1e-15)
        assert mehler_moment(2, 4, 0.7) == 0.0
        assert mehler_moment(5, 5, 0.0) == 0.0
        assert mehler_moment(0, 0, 0.0) == 1.0

    @pytest.mark.parametrize("order", [64, 128])
    def test_quadrature_agrees_with_closed_form(self, order):
        rule = make_rule(order)
        for k in (-0.9, -0.5, 0.0, 0.3, 0.7, 0.9):
            for n in range(9):
                for m in range(9):
                    got = expect_2d_correlated(
                        lambda a, b, n=n, m=m: hermite_eval(n, a) * hermite_eval(m, b),
                        k,
                        rule,
                    )
                    assert abs(got - mehler_moment(n, m, k)) <= 1e-8, (n, m, k)

    def test_invalid_arguments(self):
        with pytest.raises(ValueError):
            mehler_moment(-1, 0, 0.5)
        with pytest.raises(ValueError):
            mehler_moment(2, 2, 1.5)

"""Activation moments, Hermite coefficients, and classification."""

import math

import numpy as np
import pytest

from covflow.activations import (
    ActivationSpec,
    Classification,
    HermiteSeries,
    classify,
    default_registry,
    gaussian_mean,
    gaussian_second_moment,
    get_activation,
    hermite_coefficients,
    make_zero_mean,
    moment_rule,
    spec_from_dict,
    spec_to_dict,
    validate_spec,
)

# Reference values computed with adaptive quadrature (scipy.integrate.quad
# of the integrand against the Gaussian density on [-12, 12], abs error
# below 5e-15), an oracle independent of the fixed rules used by the
# package.  Closed forms where they exist:
#   <relu>   = phi(0) = 1/sqrt(2 pi)        <relu^2> = 1/2
#   <relu z> = <z^2 ; z>0> = 1/2             (half of <z^2> by symmetry)
#   <gelu>   = <z Phi(z)> = <Phi'(z)> = <phi(z)> = 1/(2 sqrt(pi))
#   <tanh z> = <sech^2> = 1 - <tanh^2>       (Stein identity)
RELU_MEAN = 1.0 / math.sqrt(2.0 * math.pi)
GELU_MEAN = 1.0 / (2.0 * math.sqrt(math.pi))
TANH_S2 = 0.3942944903978412
TANH_A1 = 0.6057055096021589
TANH4_S2 = 0.8053992794637257
TANH4_A1 = 0.7784028821450973
GELU_S2 = 0.42522148257029874


@pytest.fixture(scope="module")
def registry():
    return default_registry()


def dense_tanh_table(step: float = 0.01) -> ActivationSpec:
    x = np.arange(-8.0, 8.0 + step / 2, step)
    return ActivationSpec("tanh-table", "table", table_x=x, table_y=np.tanh(x))


class TestFrozenReferences:
    """Cross-check the frozen constants against an independent oracle."""

    def test_quad_oracle(self):
        quad = pytest.importorskip("scipy.integrate")
        phi = lambda z: math.exp(-z * z / 2) / math.sqrt(2 * math.pi)
        for value, integrand in [
            (TANH_S2, lambda z: math.tanh(z) ** 2 * phi(z)),
            (TANH_A1, lambda z: math.tanh(z) * z * phi(z)),
            (TANH4_S2, lambda z: math.tanh(4 * z) ** 2 * phi(z)),
            (TANH4_A1, lambda z: math.tanh(4 * z) * z * phi(z)),
        ]:
            got = quad.quad(integrand, -12, 12, epsabs=1e-14, limit=400)[0]
            assert abs(got - value) <= 1e-12

    def test_stein_identity(self):
        # <tanh(z) z> = <1 - tanh^2> ties the two frozen tanh constants.
        assert abs(TANH_A1 - (1.0 - TANH_S2)) <= 1e-15


class TestGaussianMean:
    def test_tanh_zero(self):
        assert abs(gaussian_mean(get_activation("tanh"))) <= 1e-12

    def test_relu(self):
        assert abs(gaussian_mean(get_activation("relu")) - RELU_MEAN) <= 1e-12

    def test_gelu(self):
        assert abs(gaussian_mean(get_activation("gelu")) - GELU_MEAN) <= 1e-12

    def test_shifted_relu_zero(self):
        shifted = ActivationSpec("r0", "relu", shift=-RELU_MEAN)
        assert abs(gaussian_mean(shifted)) <= 1e-10


class TestSecondMoment:
    def test_identity(self):
        assert abs(gaussian_second_moment(get_activation("identity")) - 1.0) <= 1e-12

    def test_relu_half(self):
        assert abs(gaussian_second_moment(get_activation("relu")) - 0.5) <= 1e-12

    @pytest.mark.parametrize(
        "name,value",
        [("tanh", TANH_S2), ("tanh4", TANH4_S2), ("gelu", GELU_S2)],
    )
    def test_against_oracle(self, name, value):
        assert abs(gaussian_second_moment(get_activation(name)) - value) <= 1e-9

    def test_degenerate_rejected(self):
        zero = ActivationSpec("zero", "affine", affine_a=0.0, affine_b=0.0)
        with pytest.raises(ValueError):
            gaussian_second_moment(zero)


class TestHermiteCoefficients:
    def test_identity(self):
        series = hermite_coefficients(get_activation("identity"), 4)
        assert abs(series.coefficients[1] - 1.0) <= 1e-10
        others = np.delete(series.coefficients, 1)
        assert np.max(np.abs(others)) <= 1e-10

    def test_affine(self):
        spec = ActivationSpec("a23", "affine", affine_a=2.0, affine_b=3.0)
        series = hermite_coefficients(spec, 4)
        assert abs(series.coefficients[0] - 3.0) <= 1e-9
        assert abs(series.coefficients[1] - 2.0) <= 1e-9
        assert np.max(np.abs(series.coefficients[2:])) <= 1e-9

    def test_relu_low_orders(self):
        series = hermite_coefficients(get_activation("relu"), 2)
        assert abs(series.coefficients[0] - RELU_MEAN) <= 1e-12
        assert abs(series.coefficients[1] - 0.5) <= 1e-12

    def test_tanh_a1(self):
        series = hermite_coefficients(get_activation("tanh"), 8)
        assert abs(series.coefficients[1] - TANH_A1) <= 1e-9

    def test_mean_equals_a0_across_registry(self, registry):
        for spec in registry.values():
            series = hermite_coefficients(spec, 30)
            assert abs(gaussian_mean(spec) - series.coefficients[0]) <= 1e-10, spec.id

    def test_bessel_bound_across_registry(self, registry):
        for spec in registry.values():
            series = hermite_coefficients(spec, 30)
            s2 = gaussian_second_moment(spec)
            assert series.degree_masses.sum() <= s2 + 1e-9, spec.id
            assert series.residual >= -1e-9, spec.id

    def test_degree_too_large_for_rule(self):
        spec = get_activation("tanh")
        rule = moment_rule(spec)
        with pytest.raises(ValueError):
            hermite_coefficients(spec, (2 * rule.order) // 3 + 1)

    def test_degree_must_be_positive(self):
        with pytest.raises(ValueError):
            hermite_coefficients(get_activation("tanh"), 0)


class TestParseval:
    @pytest.mark.parametrize("name", ["tanh", "gelu"])
    def test_smooth_residual_small(self, name):
        spec = get_activation(name)
        series = hermite_coefficients(spec, 30)
        assert series.residual <= 1e-6 * gaussian_second_moment(spec)

    def test_relu_residual_monotone(self):
        spec = get_activation("relu")
        residuals = [hermite_coefficients(spec, n).residual for n in range(2, 44, 4)]
        assert all(b <= a + 1e-15 for a, b in zip(residuals, residuals[1:]))
        assert residuals[-1] < residuals[0]


class TestMakeZeroMean:
    def test_relu_shift_constant(self):
        shifted = make_zero_mean(get_activation("relu"))
        assert abs(shifted.shift + RELU_MEAN) <= 1e-12
        assert abs(gaussian_mean(shifted)) <= 1e-10

    def test_tanh_unchanged(self):
        shifted = make_zero_mean(get_activation("tanh"))
        assert abs(shifted.shift) <= 1e-12

    def test_affine_folds_into_constant(self):
        spec = ActivationSpec("a15", "affine", affine_a=1.0, affine_b=5.0)
        shifted = make_zero_mean(spec)
        assert abs(shifted.affine_b) <= 1e-12
        assert shifted.affine_a == 1.0

    def test_idempotent(self, registry):
        for spec in registry.values():
            once = make_zero_mean(spec)
            twice = make_zero_mean(once)
            assert abs(gaussian_mean(twice)) <= 1e-10, spec.id
            if spec.kind != "affine":
                assert abs(twice.shift - once.shift) <= 1e-10, spec.id


class TestClassify:
    @pytest.mark.parametrize(
        "name,expected",
        [
            ("tanh", Classification.ZERO_MEAN_NONLINEAR),
            ("tanh4", Classification.ZERO_MEAN_NONLINEAR),
            ("relu", Classification.NONZERO_MEAN_NONLINEAR),
            ("gelu", Classification.NONZERO_MEAN_NONLINEAR),
            ("relu-shifted", Classification.ZERO_MEAN_NONLINEAR),
            ("gelu-shifted", Classification.ZERO_MEAN_NONLINEAR),
            ("identity", Classification.LINEAR),
            ("affine", Classification.AFFINE),
        ],
    )
    def test_registry(self, name, expected):
        spec = get_activation(name)
        assert classify(spec, hermite_coefficients(spec, 30)) is expected

    def test_scaled_identity_is_linear(self):
        spec = ActivationSpec("double", "identity", scale=2.0)
        assert classify(spec, hermite_coefficients(spec, 6)) is Classification.LINEAR

    def test_constant_is_affine(self):
        spec = ActivationSpec("c5", "affine", affine_a=0.0, affine_b=5.0)
        assert classify(spec, hermite_coefficients(spec, 4)) is Classification.AFFINE

    def test_inconclusive_on_large_residual(self):
        coarse = HermiteSeries(np.array([0.0, 0.5, 0.0, 0.1]), 3, residual=0.5)
        assert classify(get_activation("tanh"), coarse) is Classification.INCONCLUSIVE

    def test_degree_minimum(self):
        series = HermiteSeries(np.array([0.0, 1.0, 0.0]), 2, residual=0.0)
        with pytest.raises(ValueError):
            classify(get_activation("identity"), series)


class TestValidation:
    def test_registry_validates(self, registry):
        for spec in registry.values():
            validate_spec(spec)

    def test_zero_table_rejected(self):
        x = np.linspace(-8, 8, 5)
        spec = ActivationSpec("flat", "table", table_x=x, table_y=np.zeros(5))
        with pytest.raises(ValueError):
            validate_spec(spec)

    def test_table_requires_knots(self):
        with pytest.raises(ValueError):
            ActivationSpec("t", "table")

    def test_table_knots_must_increase(self):
        with pytest.raises(ValueError):
            ActivationSpec("t", "table", table_x=np.array([0.0, 0.0]), table_y=np.zeros(2))

    def test_table_domain_enforced(self):
        with pytest.raises(ValueError):
            ActivationSpec(
                "t", "table", table_x=np.array([-9.0, 9.0]), table_y=np.ones(2)
            )

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            ActivationSpec("weird", "sigmoid")


class TestTableActivation:
    def test_dense_table_tracks_smooth_function(self):
        table = dense_tanh_table()
        validate_spec(table)
        assert abs(gaussian_second_moment(table) - TANH_S2) <= 1e-4
        series = hermite_coefficients(table, 30)
        assert classify(table, series) is Classification.ZERO_MEAN_NONLINEAR

    def test_constant_extrapolation(self):
        table = dense_tanh_table(0.5)
        assert float(table(np.array([25.0]))[0]) == np.tanh(8.0)
        assert float(table(np.array([-25.0]))[0]) == np.tanh(-8.0)


class TestSerialization:
    def test_roundtrip_registry(self, registry):
        for spec in registry.values():
            back = spec_from_dict(spec_to_dict(spec))
            assert back == spec

    def test_roundtrip_table(self):
        table = dense_tanh_table(0.25)
        back = spec_from_dict(spec_to_dict(table))
        np.testing.assert_array_equal(back.table_x, table.table_x)
        np.testing.assert_array_equal(back.table_y, table.table_y)

    def test_from_dict_validates(self):
        doc = {"id": "zero", "kind": "affine", "affine_a": 0.0, "affine_b": 0.0}
        with pytest.raises(ValueError):
            spec_from_dict(doc)


class TestRegistry:
    def test_members(self, registry):
        assert set(registry) == {
            "relu",
            "gelu",
            "tanh",
            "tanh4",
            "relu-shifted",
            "gelu-shifted",
            "identity",
            "affine",
        }

    def test_unknown_name(self):
        with pytest.raises(ValueError):
            get_activation("swish")

    def test_tanh4_scale(self, registry):
        assert registry["tanh4"].scale == 4.0
        assert abs(gaussian_second_moment(registry["tanh4"]) - TANH4_S2) <= 1e-9

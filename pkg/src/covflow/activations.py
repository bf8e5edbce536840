"""Activation registry, Gaussian moments, and Hermite decompositions.

An activation is a scalar function sigma with <sigma(z)^2> finite under
the standard Gaussian measure.  Its Hermite coefficients

    a_n = <sigma(z) He_n(z)> / n!

drive the whole covariance-flow analysis: a_0 = <sigma(z)> is the
Gaussian mean whose vanishing characterizes covariance decay, and the
normalized coefficient masses a_n^2 n! / <sigma^2> are the polynomial
coefficients of the layer map.

Moments and coefficients are integrated with the mirrored panel rule
(see ``quadrature.make_panel_rule``): plain Gauss-Hermite converges only
like 1/order on the ReLU kink and badly under-resolves sharply scaled
activations such as tanh(4x), while the panel rule is exact to machine
precision for every registered kind.  Lookup tables get a knot-aligned
panel rule so the piecewise-linear integrand is polynomial on every
panel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from functools import lru_cache

import numpy as np
from numpy.polynomial.hermite_e import hermevander
from scipy.special import ndtr

from .quadrature import QuadratureRule, expect_1d, make_panel_rule

KINDS = ("relu", "gelu", "tanh", "identity", "affine", "table")

DEFAULT_TRUNCATION = 30

# Coefficients below this magnitude count as zero when classifying a
# series; two orders above quadrature noise at the default rules.
COEFF_TOL = 1e-8

TABLE_DOMAIN = 8.0


@dataclass(frozen=True)
class ActivationSpec:
    """A named scalar activation with scale/shift parameters.

    ``scale`` multiplies the input (tanh with scale 4 is tanh(4x)) and
    ``shift`` is added to the output.  ``affine_a``/``affine_b`` are used
    only for kind="affine", where sigma(z) = a*z + b.  Tables interpolate
    linearly between knots on [-8, 8] and extrapolate as constants; the
    Gaussian mass outside that window is below 1e-15.
    """

    id: str
    kind: str
    scale: float = 1.0
    shift: float = 0.0
    affine_a: float = 1.0
    affine_b: float = 0.0
    table_x: np.ndarray | None = None
    table_y: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown activation kind {self.kind!r}")
        if self.kind == "table":
            if self.table_x is None or self.table_y is None:
                raise ValueError("table activations need table_x and table_y")
            tx = np.asarray(self.table_x, dtype=np.float64)
            ty = np.asarray(self.table_y, dtype=np.float64)
            if tx.ndim != 1 or tx.shape != ty.shape or tx.size < 2:
                raise ValueError("table knots must be 1D arrays of equal length >= 2")
            if np.any(np.diff(tx) <= 0):
                raise ValueError("table_x must be strictly increasing")
            if tx[0] < -TABLE_DOMAIN - 1e-12 or tx[-1] > TABLE_DOMAIN + 1e-12:
                raise ValueError(f"table knots must lie within [-{TABLE_DOMAIN}, {TABLE_DOMAIN}]")
            tx.flags.writeable = False
            ty.flags.writeable = False
            object.__setattr__(self, "table_x", tx)
            object.__setattr__(self, "table_y", ty)
        elif self.table_x is not None or self.table_y is not None:
            raise ValueError("table knots are only valid for kind='table'")

    def __call__(self, z):
        u = self.scale * np.asarray(z, dtype=np.float64)
        if self.kind == "relu":
            return np.maximum(u, 0.0) + self.shift
        if self.kind == "gelu":
            return u * ndtr(u) + self.shift
        if self.kind == "tanh":
            return np.tanh(u) + self.shift
        if self.kind == "identity":
            return u + self.shift
        if self.kind == "affine":
            return self.affine_a * np.asarray(z, dtype=np.float64) + self.affine_b
        return np.interp(u, self.table_x, self.table_y) + self.shift


@dataclass(frozen=True)
class HermiteSeries:
    """Truncated Hermite coefficients of an activation.

    ``residual`` is the coefficient mass beyond the truncation degree,
    <sigma^2> - sum a_n^2 n!; it is non-negative up to rounding.
    """

    coefficients: np.ndarray
    truncation_degree: int
    residual: float

    def __post_init__(self):
        coeffs = np.asarray(self.coefficients, dtype=np.float64)
        if coeffs.ndim != 1 or coeffs.size != self.truncation_degree + 1:
            raise ValueError("coefficients must hold degrees 0..truncation_degree")
        if self.residual < -1e-9:
            raise ValueError(f"residual {self.residual} is more negative than rounding allows")
        coeffs.flags.writeable = False
        object.__setattr__(self, "coefficients", coeffs)

    @property
    def degree_masses(self) -> np.ndarray:
        """a_n^2 n! per degree; sums (with the residual) to <sigma^2>."""
        n = np.arange(self.truncation_degree + 1)
        factorials = np.array([math.factorial(int(d)) for d in n], dtype=np.float64)
        return self.coefficients**2 * factorials

    @property
    def second_moment(self) -> float:
        return float(self.degree_masses.sum() + self.residual)


class Classification(Enum):
    ZERO_MEAN_NONLINEAR = "ZeroMeanNonlinear"
    NONZERO_MEAN_NONLINEAR = "NonzeroMeanNonlinear"
    AFFINE = "Affine"
    LINEAR = "Linear"
    INCONCLUSIVE = "Inconclusive"


@lru_cache(maxsize=8)
def _default_moment_rule(points_per_panel: int = 24) -> QuadratureRule:
    return make_panel_rule(points_per_panel=points_per_panel)


def _table_moment_rule(spec: ActivationSpec, points_per_panel: int = 8) -> QuadratureRule:
    # Panels aligned to the knots (and their mirror images) keep the
    # interpolant smooth on every panel; the Gaussian density riding on
    # the panel still needs a handful of points per panel.
    knots = np.abs(np.asarray(spec.table_x)) / max(abs(spec.scale), 1e-300)
    edges = np.unique(np.concatenate([[0.0], knots, [TABLE_DOMAIN + 0.75, 10.5]]))
    edges = edges[edges <= 10.5 + 1e-12]
    return make_panel_rule(tuple(edges), points_per_panel=points_per_panel)


def moment_rule(spec: ActivationSpec) -> QuadratureRule:
    """The quadrature rule used for this spec's moments and coefficients."""
    if spec.kind == "table":
        return _table_moment_rule(spec)
    return _default_moment_rule()


def _refinement_pair(spec: ActivationSpec) -> tuple[QuadratureRule, QuadratureRule]:
    if spec.kind == "table":
        return _table_moment_rule(spec, 2), _table_moment_rule(spec, 4)
    return _default_moment_rule(12), _default_moment_rule(24)


def validate_spec(spec: ActivationSpec) -> None:
    """Operational square-integrability check; raises ValueError on failure.

    The second moment is computed at two quadrature refinements which
    must agree within 1e-6, and must be positive (the activation is not
    almost-everywhere zero).
    """
    coarse, fine = _refinement_pair(spec)
    s2_coarse = expect_1d(lambda z: spec(z) ** 2, coarse)
    s2_fine = expect_1d(lambda z: spec(z) ** 2, fine)
    if not math.isfinite(s2_fine) or abs(s2_fine - s2_coarse) > 1e-6:
        raise ValueError(
            f"activation {spec.id!r}: second-moment estimates disagree "
            f"({s2_coarse!r} vs {s2_fine!r}); not square-integrable enough to use"
        )
    if s2_fine <= 1e-12:
        raise ValueError(f"activation {spec.id!r} is numerically zero (<sigma^2> = {s2_fine!r})")


def gaussian_mean(spec: ActivationSpec, rule: QuadratureRule | None = None) -> float:
    """<sigma(z)> under the standard Gaussian measure (the coefficient a_0)."""
    return expect_1d(spec, rule if rule is not None else moment_rule(spec))


def gaussian_second_moment(spec: ActivationSpec, rule: QuadratureRule | None = None) -> float:
    """<sigma(z)^2>; rejects degenerate (almost-everywhere zero) activations."""
    s2 = expect_1d(lambda z: spec(z) ** 2, rule if rule is not None else moment_rule(spec))
    if s2 <= 1e-12:
        raise ValueError(f"activation {spec.id!r} is numerically zero (<sigma^2> = {s2!r})")
    return s2


def hermite_coefficients(
    spec: ActivationSpec, degree: int = DEFAULT_TRUNCATION, rule: QuadratureRule | None = None
) -> HermiteSeries:
    """Project sigma onto He_0..He_degree: a_n = <sigma He_n> / n!.

    Rejects truncation degrees above two thirds of the rule order, where
    coefficient accuracy is no longer guaranteed.
    """
    if degree < 1:
        raise ValueError(f"truncation degree must be >= 1, got {degree}")
    rule = rule if rule is not None else moment_rule(spec)
    if degree > (2 * rule.order) // 3:
        raise ValueError(
            f"truncation degree {degree} too large for a rule of order {rule.order}"
        )
    values = np.asarray(spec(rule.nodes), dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise FloatingPointError("non-finite activation value encountered")
    vander = hermevander(rule.nodes, degree)
    factorials = np.array([math.factorial(n) for n in range(degree + 1)])
    coeffs = (rule.weights * values) @ vander / factorials
    s2 = gaussian_second_moment(spec, rule)
    residual = s2 - float((coeffs**2 * factorials).sum())
    return HermiteSeries(coeffs, degree, residual)


def make_zero_mean(spec: ActivationSpec) -> ActivationSpec:
    """Shift the activation so its Gaussian mean vanishes.

    Idempotent up to rounding.  For affine activations the shift folds
    into the constant term b.
    """
    mean = gaussian_mean(spec)
    if spec.kind == "affine":
        return replace(spec, affine_b=spec.affine_b - mean)
    return replace(spec, shift=spec.shift - mean)


def classify(spec: ActivationSpec, series: HermiteSeries) -> Classification:
    """Classify the activation from its series; drives the flow analysis.

    Linear means only a_1 is non-negligible; Affine means only a_0, a_1
    (with a_0 nonzero); otherwise zero-mean vs nonzero-mean splits on
    |a_0|.  Inconclusive when the truncation residual is too large for
    the coefficients to be trusted.
    """
    if series.truncation_degree < 3:
        raise ValueError("classification needs a series of degree >= 3")
    if series.residual > 0.5 * series.second_moment:
        return Classification.INCONCLUSIVE
    big = set(np.nonzero(np.abs(series.coefficients) > COEFF_TOL)[0].tolist())
    if big <= {1}:
        return Classification.LINEAR
    if big <= {0, 1} and 0 in big:
        return Classification.AFFINE
    if abs(series.coefficients[0]) <= COEFF_TOL:
        return Classification.ZERO_MEAN_NONLINEAR
    return Classification.NONZERO_MEAN_NONLINEAR


def spec_to_dict(spec: ActivationSpec) -> dict:
    doc = {
        "id": spec.id,
        "kind": spec.kind,
        "scale": spec.scale,
        "shift": spec.shift,
        "affine_a": spec.affine_a,
        "affine_b": spec.affine_b,
    }
    if spec.kind == "table":
        doc["table"] = {"x": spec.table_x.tolist(), "y": spec.table_y.tolist()}
    return doc


def spec_from_dict(doc: dict) -> ActivationSpec:
    table = doc.get("table")
    spec = ActivationSpec(
        id=str(doc["id"]),
        kind=str(doc["kind"]),
        scale=float(doc.get("scale", 1.0)),
        shift=float(doc.get("shift", 0.0)),
        affine_a=float(doc.get("affine_a", 1.0)),
        affine_b=float(doc.get("affine_b", 0.0)),
        table_x=None if table is None else np.asarray(table["x"], dtype=np.float64),
        table_y=None if table is None else np.asarray(table["y"], dtype=np.float64),
    )
    validate_spec(spec)
    return spec


@lru_cache(maxsize=1)
def default_registry() -> dict[str, ActivationSpec]:
    """The built-in activations studied by the flow analysis."""
    relu = ActivationSpec("relu", "relu")
    gelu = ActivationSpec("gelu", "gelu")
    specs = [
        relu,
        gelu,
        ActivationSpec("tanh", "tanh"),
        ActivationSpec("tanh4", "tanh", scale=4.0),
        replace(make_zero_mean(relu), id="relu-shifted"),
        replace(make_zero_mean(gelu), id="gelu-shifted"),
        ActivationSpec("identity", "identity"),
        ActivationSpec("affine", "affine", affine_a=1.0, affine_b=1.0),
    ]
    return {spec.id: spec for spec in specs}


def get_activation(name: str) -> ActivationSpec:
    registry = default_registry()
    if name not in registry:
        known = ", ".join(sorted(registry))
        raise ValueError(f"unknown activation {name!r}; registered: {known}")
    return registry[name]

"""The layer-to-layer covariance map, its fixed points, and flow iteration.

Under critical tuning (unit-normalized inputs, zero bias variance,
weight variance 1/<sigma^2>) the per-input variance is pinned to 1 at
every layer and the between-input covariance k evolves by a scalar map

    C(k) = <sigma(z1) sigma(z2)>_Sigma / <sigma(z)^2>,

with Sigma the unit-diagonal 2x2 covariance with off-diagonal k.  In the
Hermite basis the map is the polynomial

    C(k) = sum_n a_n^2 n! k^n / <sigma^2>,

a convex combination of monomials: convex and non-negative on [0, 1],
above the diagonal on (-1, 0), with C(1) = 1 always.  Repeated
application reaches a unique fixed point k* in [0, 1]; k* = 0 exactly
when the activation has zero Gaussian mean, and the approach is then
geometric with per-layer factor C'(0) = a_1^2 / <sigma^2>.

Fixed points are located by a case split on C'(1) (evaluated as a
monotone-increasing partial sum, which is a sound lower bound because
the terms are non-negative) followed by bisection of C(k) - k; direct
iteration is kept as the verification path because it degrades when
C'(k*) is close to 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from numpy.polynomial.polynomial import polyval

from .activations import (
    COEFF_TOL,
    ActivationSpec,
    HermiteSeries,
    gaussian_second_moment,
)
from .errors import InconclusiveError
from .quadrature import (
    DEFAULT_ORDER,
    QuadratureRule,
    expect_2d_correlated,
    make_rule,
)

# Bisection never touches the k = 1 endpoint; the degenerate fixed point
# there is handled by the C'(1) <= 1 branch.
_ENDPOINT_GAP = 1e-9
_DERIVATIVE_MARGIN = 1e-9

# Iterates may overshoot [-1, 1] by quadrature error on kinked
# activations; clip within this tolerance, fail beyond it.
_OVERSHOOT_TOL = 0.05


@dataclass(frozen=True)
class CriticalHyperparams:
    """Bias/weight variances that keep per-input variance at 1 per layer."""

    c_b: float
    c_w_first: float
    c_w: float


def critical_hyperparams(spec: ActivationSpec) -> CriticalHyperparams:
    return CriticalHyperparams(c_b=0.0, c_w_first=1.0, c_w=1.0 / gaussian_second_moment(spec))


class FlowClass(Enum):
    DECAYS_TO_ZERO = "DecaysToZero"
    CONVERGES_POSITIVE = "ConvergesPositive"
    DEGENERATE_TO_ONE = "DegenerateToOne"


@dataclass(frozen=True)
class FlowReport:
    """Fixed point of the covariance map and its local behavior."""

    fixed_point: float
    derivative_at_fp: float
    classification: FlowClass
    decay_rate: float | None
    activation_id: str | None = None

    def to_dict(self) -> dict:
        return {
            "activation": self.activation_id,
            "fixed_point": self.fixed_point,
            "derivative_at_fp": self.derivative_at_fp,
            "classification": self.classification.value,
            "decay_rate": self.decay_rate,
        }


@dataclass(frozen=True)
class KernelTrajectory:
    """Off-diagonal covariance by layer under repeated map application."""

    k_values: np.ndarray
    activation_id: str | None = None

    def __post_init__(self):
        values = np.asarray(self.k_values, dtype=np.float64)
        if values.ndim != 1 or values.size < 1:
            raise ValueError("k_values must be a non-empty 1D array")
        if np.any(np.abs(values) > 1.0 + 1e-12):
            raise ValueError("trajectory left [-1, 1]")
        values.flags.writeable = False
        object.__setattr__(self, "k_values", values)


def initial_covariance(x1: np.ndarray, x2: np.ndarray) -> float:
    """Layer-1 covariance of two inputs under critical tuning.

    Both inputs must be normalized to mean square 1; the result is their
    normalized dot product, clipped into [-1, 1] against rounding.
    """
    a = np.asarray(x1, dtype=np.float64)
    b = np.asarray(x2, dtype=np.float64)
    if a.ndim != 1 or a.shape != b.shape:
        raise ValueError("inputs must be 1D vectors of equal length")
    for name, v in (("x1", a), ("x2", b)):
        norm = float(np.mean(v * v))
        if abs(norm - 1.0) > 1e-8:
            raise ValueError(f"{name} is not normalized: mean square {norm!r} != 1")
    return float(np.clip(np.mean(a * b), -1.0, 1.0))


@dataclass(frozen=True)
class _QuadratureMap:
    """C via 2D quadrature; numerator and denominator share one rule so
    that C(1) = 1 holds exactly."""

    spec: ActivationSpec
    rule: QuadratureRule
    second_moment: float

    def __call__(self, k: float) -> float:
        num = expect_2d_correlated(lambda a, b: self.spec(a) * self.spec(b), k, self.rule)
        return num / self.second_moment


def _quadrature_map(spec: ActivationSpec, rule: QuadratureRule | None = None) -> _QuadratureMap:
    rule = rule if rule is not None else make_rule(DEFAULT_ORDER)
    s2 = gaussian_second_moment(spec, rule)
    return _QuadratureMap(spec, rule, s2)


def cmap_quadrature(k: float, spec: ActivationSpec, rule: QuadratureRule | None = None) -> float:
    """Evaluate the covariance map by correlated 2D quadrature."""
    return _quadrature_map(spec, rule)(k)


def cmap_series(k: float, series: HermiteSeries) -> float:
    """Evaluate the covariance map from the Hermite series polynomial."""
    if abs(k) > 1.0:
        raise ValueError(f"covariance must satisfy |k| <= 1, got {k}")
    return float(polyval(k, series.degree_masses)) / series.second_moment


def cmap_derivative(k: float, series: HermiteSeries) -> float:
    """Derivative of the series polynomial map; non-negative and
    non-decreasing on [0, 1] by convexity."""
    if abs(k) > 1.0:
        raise ValueError(f"covariance must satisfy |k| <= 1, got {k}")
    masses = series.degree_masses
    dcoeffs = masses[1:] * np.arange(1, masses.size)
    return float(polyval(k, dcoeffs)) / series.second_moment


def _series_support(series: HermiteSeries) -> set[int]:
    return set(np.nonzero(np.abs(series.coefficients) > COEFF_TOL)[0].tolist())


def find_fixed_point(series: HermiteSeries, activation_id: str | None = None) -> FlowReport:
    """Locate and classify the attractive fixed point of the map.

    Case split on C'(1): if the (monotone increasing) partial sum stays
    at or below 1 the map is above the diagonal everywhere and the flow
    degenerates to the fixed point at 1; if it crosses 1 there is a
    unique interior fixed point found by bisection of C(k) - k on
    [0, 1 - eps].  Affine activations use the closed form
    C(k) = (a^2 k + b^2) / (a^2 + b^2), whose fixed point is 1.
    """
    support = _series_support(series)
    if support <= {1}:
        raise ValueError(
            "linear activation: the covariance map is the identity and every "
            "point is fixed; the flow analysis does not apply"
        )
    s2 = series.second_moment
    if support <= {0, 1}:
        a0, a1 = series.coefficients[0], series.coefficients[1]
        return FlowReport(
            fixed_point=1.0,
            derivative_at_fp=a1 * a1 / (a1 * a1 + a0 * a0),
            classification=FlowClass.DEGENERATE_TO_ONE,
            decay_rate=None,
            activation_id=activation_id,
        )

    masses = series.degree_masses
    partial = float((np.arange(1, masses.size) * masses[1:]).sum()) / s2
    tail_floor = (series.truncation_degree + 1) * max(series.residual, 0.0) / s2
    if partial <= 1.0 + _DERIVATIVE_MARGIN:
        if partial + tail_floor > 1.0 + _DERIVATIVE_MARGIN:
            raise InconclusiveError(
                "C'(1) uncertainty band straddles 1: partial sum "
                f"{partial!r} with minimal tail contribution {tail_floor!r}; "
                "increase the truncation degree"
            )
        return FlowReport(
            fixed_point=1.0,
            derivative_at_fp=partial,
            classification=FlowClass.DEGENERATE_TO_ONE,
            decay_rate=None,
            activation_id=activation_id,
        )

    # Interior fixed point.  f(0) = a_0^2 / s2 >= 0 and f(1 - eps) < 0.
    def f(k: float) -> float:
        return cmap_series(k, series) - k

    lo, hi = 0.0, 1.0 - _ENDPOINT_GAP
    f_lo = f(lo)
    if f_lo <= 1e-13:
        fixed = 0.0
    else:
        if f(hi) >= 0.0:
            raise InconclusiveError(
                "no sign change of C(k) - k on [0, 1) despite C'(1) > 1; "
                "the series is numerically inconsistent"
            )
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if mid in (lo, hi):
                break
            if f(mid) > 0.0:
                lo = mid
            else:
                hi = mid
        fixed = lo if abs(f(lo)) <= abs(f(hi)) else hi
        if abs(f(fixed)) > 1e-12:
            raise InconclusiveError(
                f"bisection stalled at k = {fixed!r} with residual {f(fixed)!r}"
            )
    derivative = cmap_derivative(fixed, series)
    if not 0.0 <= derivative < 1.0:
        raise InconclusiveError(
            f"derivative {derivative!r} at the fixed point lies outside [0, 1)"
        )
    classification = FlowClass.DECAYS_TO_ZERO if fixed <= 1e-10 else FlowClass.CONVERGES_POSITIVE
    return FlowReport(
        fixed_point=fixed,
        derivative_at_fp=derivative,
        classification=classification,
        decay_rate=derivative,
        activation_id=activation_id,
    )


def iterate_flow(
    k0: float,
    spec_or_series: ActivationSpec | HermiteSeries,
    depth: int,
    rule: QuadratureRule | None = None,
) -> KernelTrajectory:
    """Apply the covariance map ``depth`` times starting from k0.

    k0 must lie strictly inside (-1, 1): datasets containing scalar
    multiples of one input (|k0| = 1) are excluded from the flow
    analysis.  While an iterate is negative it must strictly increase,
    and once the flow enters [0, 1] it stays there; both facts are
    asserted at runtime.
    """
    k0 = float(k0)
    if abs(k0) >= 1.0:
        raise ValueError(
            f"k0 = {k0} is excluded: inputs that are scalar multiples of each "
            "other (|k0| = 1) are outside the flow analysis"
        )
    if depth < 1:
        raise ValueError(f"depth must be >= 1, got {depth}")
    if isinstance(spec_or_series, HermiteSeries):
        series = spec_or_series
        step = lambda k: cmap_series(k, series)
        activation_id = None
    else:
        cmap = _quadrature_map(spec_or_series, rule)
        step = cmap
        activation_id = spec_or_series.id
    values = np.empty(depth, dtype=np.float64)
    k = k0
    for layer in range(depth):
        k_next = step(k)
        if abs(k_next) > 1.0 + _OVERSHOOT_TOL:
            raise RuntimeError(f"covariance map overshot to {k_next!r} from {k!r}")
        k_next = min(1.0, max(-1.0, k_next))
        if k < 0.0 and k_next <= k - 1e-12:
            raise RuntimeError(
                f"map failed to increase a negative covariance: {k!r} -> {k_next!r}"
            )
        if k >= 0.0 and k_next < -1e-12:
            raise RuntimeError(f"map left [0, 1] after entering it: {k!r} -> {k_next!r}")
        values[layer] = k_next
        k = k_next
    return KernelTrajectory(values, activation_id)


def estimate_decay_rate(trajectory: KernelTrajectory) -> float:
    """Per-layer contraction factor from the decaying tail.

    Least-squares slope of log |k_l| over the tail where |k_l| < 0.1
    (the linearization region) and |k_l| > 1e-13 (above numeric noise);
    returns exp(slope).
    """
    values = trajectory.k_values
    if int((np.abs(values) > 1e-13).sum()) < 10:
        raise ValueError("need at least 10 layers with |k| > 1e-13 to fit a rate")
    mask = (np.abs(values) < 0.1) & (np.abs(values) > 1e-13)
    if int(mask.sum()) < 5:
        raise InconclusiveError(
            f"only {int(mask.sum())} usable tail points; need at least 5"
        )
    layers = np.nonzero(mask)[0].astype(np.float64)
    slope = float(np.polyfit(layers, np.log(np.abs(values[mask])), 1)[0])
    factor = math.exp(slope)
    if not 0.0 < factor < 1.0:
        raise InconclusiveError(f"fitted factor {factor!r} is not a contraction")
    return factor


def figure1_curve(
    spec: ActivationSpec, grid: np.ndarray, rule: QuadratureRule | None = None
) -> np.ndarray:
    """Tabulate (k, C(k)) pairs over a grid for plotting or CSV emission."""
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 1 or grid.size < 1:
        raise ValueError("grid must be a non-empty 1D array")
    if np.any(np.abs(grid) > 1.0):
        raise ValueError("grid values must lie in [-1, 1]")
    cmap = _quadrature_map(spec, rule)
    return np.column_stack([grid, [cmap(float(k)) for k in grid]])

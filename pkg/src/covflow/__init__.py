"""Covariance flow of wide randomly initialized neural networks.

Hermite decomposition of activations, the layer-to-layer covariance map
with fixed-point classification by the zero-mean criterion, seeded
Monte Carlo simulation of finite-width networks, and a rarity harness
for the all-negative-output property.
"""

__version__ = "0.1.0"

from .activations import (
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
)
from .errors import InconclusiveError
from .flow import (
    CriticalHyperparams,
    FlowClass,
    FlowReport,
    KernelTrajectory,
    cmap_derivative,
    cmap_quadrature,
    cmap_series,
    critical_hyperparams,
    estimate_decay_rate,
    figure1_curve,
    find_fixed_point,
    initial_covariance,
    iterate_flow,
)
from .quadrature import (
    QuadratureRule,
    expect_1d,
    expect_2d_correlated,
    hermite_eval,
    make_panel_rule,
    make_rule,
    mehler_moment,
)
from .simulator import (
    Dataset,
    EmpiricalCovariance,
    FourPointReport,
    KurtosisReport,
    NetworkConfig,
    NetworkSample,
    connected_four_point,
    covariance_zscores,
    dataset_from_gram,
    estimate_covariance,
    forward,
    four_point_halving_consistent,
    four_point_scaling,
    make_config,
    normality_diagnostics,
    sample_network,
    theory_covariance,
)
from .conjecture import (
    PropertyResult,
    RarityReport,
    SignDataset,
    check_property,
    conjecture_config,
    estimate_rarity,
    estimate_rarity_synthetic,
    generate_sign_dataset,
)

__all__ = [
    "__version__",
    "ActivationSpec",
    "Classification",
    "CriticalHyperparams",
    "Dataset",
    "EmpiricalCovariance",
    "FlowClass",
    "FlowReport",
    "FourPointReport",
    "HermiteSeries",
    "InconclusiveError",
    "KernelTrajectory",
    "KurtosisReport",
    "NetworkConfig",
    "NetworkSample",
    "PropertyResult",
    "QuadratureRule",
    "RarityReport",
    "SignDataset",
    "check_property",
    "classify",
    "cmap_derivative",
    "cmap_quadrature",
    "cmap_series",
    "conjecture_config",
    "connected_four_point",
    "covariance_zscores",
    "critical_hyperparams",
    "dataset_from_gram",
    "default_registry",
    "estimate_covariance",
    "estimate_decay_rate",
    "estimate_rarity",
    "estimate_rarity_synthetic",
    "expect_1d",
    "expect_2d_correlated",
    "figure1_curve",
    "find_fixed_point",
    "forward",
    "four_point_halving_consistent",
    "four_point_scaling",
    "gaussian_mean",
    "gaussian_second_moment",
    "generate_sign_dataset",
    "get_activation",
    "hermite_coefficients",
    "hermite_eval",
    "initial_covariance",
    "iterate_flow",
    "make_config",
    "make_panel_rule",
    "make_rule",
    "make_zero_mean",
    "mehler_moment",
    "normality_diagnostics",
    "sample_network",
    "theory_covariance",
]

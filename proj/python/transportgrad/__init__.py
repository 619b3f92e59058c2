"""Unbiased gradient estimators built from transport-equation velocity fields."""

from ._core import (
    AvfParams,
    Mixture,
    Mvn,
    StudentT,
    TestFunction,
    __version__,
    adapt_avf,
    analytic_gradient,
    coordinates,
    erfc,
    erfcx,
    gradient_samples,
    log_density,
    log_radial_cdf,
    max_transport_residual,
    radial_cdf,
    run_cli,
    sample,
    score,
    std_normal_cdf,
    unbiasedness_ztest,
    variance_grad_lambda,
    velocity_fields,
)

__all__ = [
    "AvfParams",
    "Mixture",
    "Mvn",
    "StudentT",
    "TestFunction",
    "__version__",
    "adapt_avf",
    "analytic_gradient",
    "coordinates",
    "erfc",
    "erfcx",
    "gradient_samples",
    "log_density",
    "log_radial_cdf",
    "max_transport_residual",
    "radial_cdf",
    "run_cli",
    "sample",
    "score",
    "std_normal_cdf",
    "unbiasedness_ztest",
    "variance_grad_lambda",
    "velocity_fields",
]

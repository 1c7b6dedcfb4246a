"""Moment-conversion subspace identification and Laplace-EM for
input-driven Bernoulli latent linear dynamical systems."""

from .errors import (
    BestLDSError,
    ConfigError,
    ConvergenceError,
    DegenerateChannelError,
    NumericalError,
    ParameterError,
    StabilityError,
)
from .laplace_em import (
    EMConfig,
    EMTrace,
    NewtonConfig,
    PosteriorApprox,
    bestlds_init,
    e_step,
    gaussian_init,
    laplace_log_evidence,
    m_step,
    random_init,
    run_em,
)
from .metrics import (
    ErrorReport,
    eig_error,
    error_report,
    gain,
    impulse_response,
    log_evidence,
    predict_choices,
    principal_angles,
    subspace_angle,
)
from .model import (
    PRESETS,
    InputSpec,
    SystemParams,
    TimeSeries,
    concatenate_timeseries,
    longrun_latent_cov,
    make_preset,
    similarity_transform,
    simulate,
    simulate_noiseless,
    simulate_trials,
    stacked_latent_moments,
    stationary_latent_cov,
)
from .moments import (
    ConvertedMoments,
    HankelConfig,
    StackedMoments,
    bivariate_orthant,
    build_hankel_moments,
    build_real_hankel_moments,
    conversion_limit,
    convert,
    cross_cov_entry,
    gaussian_moments,
    latent_corr_from_pair,
    latent_corr_robust,
    latent_mean_from_rate,
    truncated_moment,
)
from .ssid import (
    SsidResult,
    cholesky_R,
    fit_bestlds,
    gauss_baseline,
    hankel_spectrum,
    identify_moments,
    n4sid,
)

__version__ = "0.1.0"

__all__ = [
    "BestLDSError",
    "ConfigError",
    "ConvergenceError",
    "DegenerateChannelError",
    "NumericalError",
    "ParameterError",
    "StabilityError",
    "PRESETS",
    "InputSpec",
    "SystemParams",
    "TimeSeries",
    "concatenate_timeseries",
    "longrun_latent_cov",
    "make_preset",
    "similarity_transform",
    "simulate",
    "simulate_noiseless",
    "simulate_trials",
    "stacked_latent_moments",
    "stationary_latent_cov",
    "EMConfig",
    "EMTrace",
    "NewtonConfig",
    "PosteriorApprox",
    "bestlds_init",
    "e_step",
    "gaussian_init",
    "laplace_log_evidence",
    "m_step",
    "random_init",
    "run_em",
    "ErrorReport",
    "eig_error",
    "error_report",
    "gain",
    "impulse_response",
    "log_evidence",
    "predict_choices",
    "principal_angles",
    "subspace_angle",
    "ConvertedMoments",
    "HankelConfig",
    "StackedMoments",
    "bivariate_orthant",
    "build_hankel_moments",
    "build_real_hankel_moments",
    "conversion_limit",
    "convert",
    "cross_cov_entry",
    "gaussian_moments",
    "latent_corr_from_pair",
    "latent_corr_robust",
    "latent_mean_from_rate",
    "truncated_moment",
    "SsidResult",
    "cholesky_R",
    "fit_bestlds",
    "gauss_baseline",
    "hankel_spectrum",
    "identify_moments",
    "n4sid",
    "__version__",
]

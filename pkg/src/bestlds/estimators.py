"""Estimator-style wrappers over the functional fitting pipeline.

Each estimator follows the usual fit/predict/get_params protocol so the
fitters can sit inside model-selection loops (grid search, cross
validation) without adapters. Construction stores hyperparameters only;
all data-dependent state lands on ``fit`` in trailing-underscore
attributes. There is no hard dependency on any estimator framework.
"""

from __future__ import annotations

import inspect
import time

import numpy as np

from .errors import ConfigError
from .laplace_em import (
    EMConfig,
    NewtonConfig,
    bestlds_init,
    gaussian_init,
    random_init,
    run_em,
)
from .metrics import predict_choices
from .model import TimeSeries
from .ssid import fit_bestlds, gauss_baseline


def as_timeseries(data) -> TimeSeries:
    """Coerce estimator input into a TimeSeries.

    Accepts a TimeSeries as-is, or an (inputs, observations) pair of
    arrays with one row per time step.
    """
    if isinstance(data, TimeSeries):
        return data
    if isinstance(data, (tuple, list)) and len(data) == 2:
        u, y = data
        return TimeSeries(u=np.asarray(u, dtype=float), y=np.asarray(y))
    raise ConfigError(
        "expected a TimeSeries or a (u, y) pair of per-step arrays"
    )


class _EstimatorBase:
    """Hyperparameter bookkeeping shared by the concrete estimators."""

    @classmethod
    def _param_names(cls) -> list[str]:
        sig = inspect.signature(cls.__init__)
        return [name for name in sig.parameters if name != "self"]

    def get_params(self, deep: bool = True) -> dict:
        return {name: getattr(self, name) for name in self._param_names()}

    def set_params(self, **updates) -> "_EstimatorBase":
        valid = set(self._param_names())
        for key, value in updates.items():
            if key not in valid:
                raise ConfigError(
                    f"unknown parameter {key!r} for {type(self).__name__}; "
                    f"choices are {sorted(valid)}"
                )
            setattr(self, key, value)
        return self

    def _require_fitted(self):
        if getattr(self, "params_", None) is None:
            raise ConfigError(
                f"{type(self).__name__} is not fitted yet; call fit first"
            )

    def _require_p(self):
        if self.p is None:
            raise ConfigError(
                "latent dimension p is not set; pick it explicitly "
                "(hankel_spectrum on the converted moments shows the rank)"
            )

    def predict(self, data, open_loop: bool = False) -> np.ndarray:
        """One-step-ahead binary predictions for each time step."""
        self._require_fitted()
        y_hat, _ = predict_choices(self.params_, as_timeseries(data), open_loop)
        return y_hat

    def score(self, data) -> float:
        """Fraction of observations matched by one-step-ahead prediction."""
        self._require_fitted()
        _, accuracy = predict_choices(self.params_, as_timeseries(data))
        return accuracy


class BestLDS(_EstimatorBase):
    """Subspace identification of a probit-Bernoulli linear system.

    Converts binary observation moments to latent-Gaussian moments and
    runs covariance-form N4SID on the result. Deterministic given the
    data; no iterations, no initialization.
    """

    def __init__(self, k: int = 4, p: int | None = None, pooled: bool = True):
        self.k = k
        self.p = p
        self.pooled = pooled
        self.params_ = None
        self.result_ = None

    def fit(self, data, y=None) -> "BestLDS":
        self._require_p()
        from .moments import HankelConfig

        ts = as_timeseries(data)
        self.result_ = fit_bestlds(ts, HankelConfig(k=self.k, pooled=self.pooled), self.p)
        self.params_ = self.result_.params
        return self

    @property
    def singular_values_(self) -> np.ndarray:
        self._require_fitted()
        return self.result_.singular_values


class GaussianLDS(_EstimatorBase):
    """Baseline that runs the same subspace pipeline on raw binary values."""

    def __init__(self, k: int = 4, p: int | None = None, pooled: bool = True):
        self.k = k
        self.p = p
        self.pooled = pooled
        self.params_ = None
        self.result_ = None

    def fit(self, data, y=None) -> "GaussianLDS":
        self._require_p()
        from .moments import HankelConfig

        ts = as_timeseries(data)
        self.result_ = gauss_baseline(ts, HankelConfig(k=self.k, pooled=self.pooled), self.p)
        self.params_ = self.result_.params
        return self


class BernoulliLDSEM(_EstimatorBase):
    """Laplace-EM refinement starting from a configurable initialization.

    init is one of "bestlds", "gaussian", "random". The subspace
    initializers reuse k; the random initializer draws from seed. After
    fit, trace_ holds the per-iteration record with the initializer's
    wall-clock filled in.
    """

    def __init__(
        self,
        k: int = 4,
        p: int | None = None,
        init: str = "bestlds",
        max_iters: int = 50,
        conv_mode: str = "auto",
        gain_tol: float = 0.15,
        evidence_tol_bits: float = 0.01,
        newton_max_steps: int = 100,
        seed: int = 0,
    ):
        self.k = k
        self.p = p
        self.init = init
        self.max_iters = max_iters
        self.conv_mode = conv_mode
        self.gain_tol = gain_tol
        self.evidence_tol_bits = evidence_tol_bits
        self.newton_max_steps = newton_max_steps
        self.seed = seed
        self.params_ = None
        self.trace_ = None

    def _initial_params(self, ts: TimeSeries):
        if self.init == "bestlds":
            return bestlds_init(ts, self.k, self.p)
        if self.init == "gaussian":
            return gaussian_init(ts, self.k, self.p)
        if self.init == "random":
            return random_init(self.p, ts.q, ts.m, seed=self.seed)
        raise ConfigError(
            f"unknown init {self.init!r}; choices are bestlds, gaussian, random"
        )

    def fit(self, data, y=None) -> "BernoulliLDSEM":
        self._require_p()
        ts = as_timeseries(data)
        t0 = time.perf_counter()
        start = self._initial_params(ts)
        init_seconds = time.perf_counter() - t0

        cfg = EMConfig(
            max_iters=self.max_iters,
            conv_mode=self.conv_mode,
            gain_tol=self.gain_tol,
            evidence_tol_bits=self.evidence_tol_bits,
            newton=NewtonConfig(max_steps=self.newton_max_steps),
            seed=self.seed,
        )
        self.trace_ = run_em(start, ts, cfg)
        self.trace_.init_seconds = init_seconds
        self.params_ = self.trace_.params
        return self

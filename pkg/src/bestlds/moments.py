"""Binary-to-Gaussian moment conversion and block-Hankel moment stacking.

Under a probit observation y = 1{z + noise >= 0} with var(z_i) normalized
to 1, the first two moments of the binary record determine the latent
Gaussian moments exactly:

    E[y_i]       = Phi(mu_i)                 -> mu_i by inverting Phi
    E[y_i y_j]   = P(z_i >= 0, z_j >= 0)     -> rho_ij by inverting the
                                               bivariate orthant probability
    cov(u_j,z_i) = cov(u_j, y_i) / phi(mu_i) -> cross covariances in closed
                                               form via Stein's identity

This module estimates the stacked (past/future block-Hankel) moments of a
binary time series and applies those three inversions entrywise, producing
a Gaussian-equivalent joint second-moment matrix ready for subspace
identification. A parallel path (gaussian_moments) skips the probit
inversion entirely and treats the binary record as real-valued, which is
the comparison baseline.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.optimize import brentq, minimize_scalar
from scipy.special import ndtr, ndtri

from .errors import ConfigError, DegenerateChannelError, NumericalError, ParameterError
from .linalg import chol_lower, repair_psd, symmetrize
from .model import SystemParams, TimeSeries, stacked_latent_moments

_TWOPI = 2.0 * math.pi
_SQRT_TWOPI = math.sqrt(_TWOPI)

# Gauss-Legendre rule shared by both quadrature branches below. Twenty nodes
# hold the bivariate CDF error at or below ~1e-15 across the tested domain.
_GL_X, _GL_W = leggauss(20)

# Bracket margin for the correlation root search.
_RHO_EDGE = 1e-9
# Bound margin for the robust (minimizing) fallback.
_RHO_EDGE_ROBUST = 1e-6
# Density floor below which a channel mean is too extreme to divide by.
_DENSITY_FLOOR = 1e-12


def _phi(x: float) -> float:
    return math.exp(-0.5 * x * x) / _SQRT_TWOPI


def latent_mean_from_rate(rate: float) -> float:
    """Latent mean mu with Phi(mu) equal to the observed firing rate.

    Parameters
    ----------
    rate : float
        Marginal probability of a 1, strictly inside (0, 1).

    Returns
    -------
    float
        mu = Phi^{-1}(rate).
    """
    if not 0.0 < rate < 1.0:
        raise ParameterError(f"rate must lie strictly in (0, 1), got {rate}")
    return float(ndtri(rate))


def _bvnu(dh: float, dk: float, r: float) -> float:
    """Upper-right bivariate normal probability P(X > dh, Y > dk).

    X, Y are standard normal with correlation r, |r| < 1. Gauss-Legendre
    evaluation of the Drezner-Wesolowsky single integral; the near-singular
    |r| >= 0.925 regime uses the complementary expansion in sqrt(1 - r^2)
    with its own quadrature correction.
    """
    h, k = dh, dk
    hk = h * k
    if abs(r) < 0.925:
        hs = 0.5 * (h * h + k * k)
        asr = math.asin(r)
        sn = np.sin(0.5 * asr * (1.0 + _GL_X))
        vals = np.exp((sn * hk - hs) / (1.0 - sn * sn))
        bvn = float(_GL_W @ vals) * asr / (2.0 * _TWOPI)
        bvn += ndtr(-h) * ndtr(-k)
    else:
        if r < 0.0:
            k = -k
            hk = -hk
        aas = (1.0 - r) * (1.0 + r)
        a = math.sqrt(aas)
        bs = (h - k) ** 2
        c = (4.0 - hk) / 8.0
        d = (12.0 - hk) / 16.0
        asr0 = -0.5 * (bs / aas + hk)
        bvn = 0.0
        if asr0 > -100.0:
            bvn = (
                a
                * math.exp(asr0)
                * (1.0 - c * (bs - aas) * (1.0 - d * bs / 5.0) / 3.0
                   + c * d * aas * aas / 5.0)
            )
        if -hk < 100.0:
            b = math.sqrt(bs)
            sp = _SQRT_TWOPI * ndtr(-b / a)
            bvn -= math.exp(-0.5 * hk) * sp * b * (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0)
        half = 0.5 * a
        xs = (half * (1.0 + _GL_X)) ** 2
        rs = np.sqrt(1.0 - xs)
        asr_q = -0.5 * (bs / xs + hk)
        sp_q = 1.0 + c * xs * (1.0 + d * xs)
        ep_q = np.exp(-hk * (1.0 - rs) / (2.0 * (1.0 + rs))) / rs
        vals = np.where(asr_q > -100.0, np.exp(asr_q) * (ep_q - sp_q), 0.0)
        bvn += half * float(_GL_W @ vals)
        bvn = -bvn / _TWOPI
        if r > 0.0:
            bvn += ndtr(-max(h, k))
        else:
            bvn = -bvn + max(0.0, ndtr(-h) - ndtr(-k))
    return min(1.0, max(0.0, bvn))


def bivariate_orthant(mu_i: float, mu_j: float, rho: float) -> float:
    """Probability that both coordinates of a bivariate normal are nonnegative.

    The pair (z_i, z_j) has means (mu_i, mu_j), unit variances, and
    correlation rho. This is the forward map whose inversion yields latent
    correlations from binary co-activation probabilities.

    Parameters
    ----------
    mu_i, mu_j : float
        Latent channel means.
    rho : float
        Latent correlation, |rho| <= 1. The limits rho = +/-1 return the
        exact comonotone/antimonotone probabilities.

    Returns
    -------
    float
        P(z_i >= 0, z_j >= 0), within [0, 1].
    """
    if not (math.isfinite(mu_i) and math.isfinite(mu_j)):
        raise ParameterError("latent means must be finite")
    if not -1.0 <= rho <= 1.0:
        raise ParameterError(f"correlation must lie in [-1, 1], got {rho}")
    if rho >= 1.0 - 1e-14:
        return min(ndtr(mu_i), ndtr(mu_j))
    if rho <= -1.0 + 1e-14:
        return max(0.0, ndtr(mu_i) + ndtr(mu_j) - 1.0)
    return _bvnu(-mu_i, -mu_j, rho)


def latent_corr_from_pair(e_yy: float, mu_i: float, mu_j: float) -> float:
    """Invert the orthant probability for the latent correlation.

    Finds rho with bivariate_orthant(mu_i, mu_j, rho) = e_yy by bracketed
    root search; the orthant probability is strictly increasing in rho, so
    the root is unique. Targets outside the attainable (Frechet) range,
    which happens at finite sample sizes, fall back to latent_corr_robust.

    Parameters
    ----------
    e_yy : float
        Observed co-activation probability E[y_i y_j].
    mu_i, mu_j : float
        Latent channel means (already inverted from the rates).

    Returns
    -------
    float
        Latent correlation in (-1, 1), matching the target to ~1e-9 when
        it is attainable.
    """
    lower = max(0.0, ndtr(mu_i) + ndtr(mu_j) - 1.0)
    upper = min(ndtr(mu_i), ndtr(mu_j))
    if not lower <= e_yy <= upper:
        return latent_corr_robust(e_yy, mu_i, mu_j)
    lo = -1.0 + _RHO_EDGE
    hi = 1.0 - _RHO_EDGE
    f = lambda r: bivariate_orthant(mu_i, mu_j, r) - e_yy
    f_lo, f_hi = f(lo), f(hi)
    if f_lo > 0.0 or f_hi < 0.0:
        # Attainable only within the bracket margin of +/-1.
        return latent_corr_robust(e_yy, mu_i, mu_j)
    if f_lo == 0.0:
        return lo
    if f_hi == 0.0:
        return hi
    return float(brentq(f, lo, hi, xtol=1e-13, maxiter=200))


def latent_corr_robust(e_yy: float, mu_i: float, mu_j: float) -> float:
    """Nearest-achievable latent correlation for a possibly infeasible target.

    Minimizes |bivariate_orthant(mu_i, mu_j, rho) - e_yy| over
    rho in [-1 + eps, 1 - eps] with eps = 1e-6. Targets at or beyond the
    range boundaries map to the corresponding boundary correlation.
    """
    lo = -1.0 + _RHO_EDGE_ROBUST
    hi = 1.0 - _RHO_EDGE_ROBUST
    if e_yy >= bivariate_orthant(mu_i, mu_j, hi):
        return hi
    if e_yy <= bivariate_orthant(mu_i, mu_j, lo):
        return lo
    res = minimize_scalar(
        lambda r: abs(bivariate_orthant(mu_i, mu_j, r) - e_yy),
        bounds=(lo, hi),
        method="bounded",
        options={"xatol": 1e-10},
    )
    return float(res.x)


def truncated_moment(mu: float) -> float:
    """E[z 1{z >= 0}] for z ~ N(mu, 1), i.e. mu*Phi(mu) + phi(mu)."""
    return mu * ndtr(mu) + _phi(mu)


def cross_cov_entry(
    e_yu: float, mean_u: float, mu_z: float, channel: int | None = None
) -> float:
    """Latent-input covariance from one binary-input product moment.

    Stein's identity for the probit link gives
    E[y_i u_j] = mean_u * Phi(mu_z) + cov(u_j, z_i) * phi(mu_z), so the
    covariance follows by rearrangement. Channels whose mean is so extreme
    that phi(mu_z) underflows the 1e-12 floor cannot be divided through and
    raise DegenerateChannelError.

    Parameters
    ----------
    e_yu : float
        Product moment E[y_i u_j].
    mean_u : float
        Input channel mean E[u_j].
    mu_z : float
        Latent mean of the binary channel.
    channel : int, optional
        Index reported if the channel is degenerate.
    """
    dens = _phi(mu_z)
    if dens < _DENSITY_FLOOR:
        raise DegenerateChannelError(
            -1 if channel is None else channel,
            f"phi(mu) = {dens:.3e} below {_DENSITY_FLOOR}; channel too "
            "saturated for cross-covariance conversion",
        )
    return (e_yu - mean_u * ndtr(mu_z)) / dens


@dataclass(frozen=True)
class HankelConfig:
    """Stacking configuration: k past and k future block rows.

    pooled=True (default) estimates one statistic per (channel pair, lag)
    and tiles the block-Toeplitz stack from those; pooled=False averages
    per stacked coordinate over explicit windows, which is exact for a
    single window but noisier and much more memory-hungry.
    """

    k: int
    pooled: bool = True

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError("k must be a positive integer")


@dataclass
class StackedMoments:
    """First and second moments of the 2k-deep stacked inputs/observations.

    Matrices are indexed offset-major: coordinate o*q + i is channel i at
    window offset o. e_yy holds uncentered observation products; cov_uu and
    cov_yu are centered in u only. rate_y is the (clamped, for binary data)
    mean vector of the stacked observations.
    """

    k: int
    q: int
    m: int
    pooled: bool
    binary: bool
    n_windows: int
    n_samples: int
    rate_y: np.ndarray
    mean_u: np.ndarray
    e_yy: np.ndarray
    cov_uu: np.ndarray
    cov_yu: np.ndarray
    clamped_channels: tuple = ()


@dataclass
class ConvertedMoments:
    """Gaussian-equivalent joint moments of the stacked [inputs; signal].

    sigma is ordered with all 2k input blocks first, then the 2k signal
    blocks; factor is its lower Cholesky factor (factor @ factor.T = sigma)
    computed after any PSD repair. min_eig records the smallest eigenvalue
    seen before repair.
    """

    k: int
    q: int
    m: int
    mu_u: np.ndarray
    mu_z: np.ndarray
    sigma: np.ndarray
    factor: np.ndarray
    repaired: bool
    min_eig: float
    link: str
    n_windows: int


def build_hankel_moments(
    ts: TimeSeries, config: HankelConfig | int
) -> StackedMoments:
    """Estimate stacked moments of a binary time series.

    Windows of length 2k are taken within trials only; every trial must
    contain at least one full window. Exact-zero or exact-one rates are
    clamped to [1/(2 n_windows), 1 - 1/(2 n_windows)] with a warning, since
    the probit inversion needs rates strictly inside (0, 1).
    """
    cfg = HankelConfig(k=config) if isinstance(config, int) else config
    return _stack_moments(
        np.asarray(ts.u, dtype=float),
        ts.y.astype(float),
        cfg,
        ts.segments(),
        binary=True,
    )


def build_real_hankel_moments(
    u: np.ndarray,
    values: np.ndarray,
    config: HankelConfig | int,
    trial_starts: tuple[int, ...] = (0,),
) -> StackedMoments:
    """Stacked moments of a real-valued signal (no clamping, no probit).

    Serves the oracle path that runs identification on the latent signal
    directly, and any other real-valued observation record.
    """
    cfg = HankelConfig(k=config) if isinstance(config, int) else config
    u = np.asarray(u, dtype=float)
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    if u.ndim == 1:
        u = u[:, None]
    if u.shape[0] != values.shape[0]:
        raise ConfigError("u and values must have the same number of rows")
    n = values.shape[0]
    bounds = list(trial_starts) + [n]
    segments = list(zip(bounds[:-1], bounds[1:]))
    return _stack_moments(u, values, cfg, segments, binary=False)


def _stack_moments(u, v, cfg, segments, binary) -> StackedMoments:
    k2 = 2 * cfg.k
    q = v.shape[1]
    m = u.shape[1]
    for idx, (a, b) in enumerate(segments):
        if b - a < k2:
            raise ConfigError(
                f"trial {idx} has {b - a} samples, fewer than one 2k = {k2} window"
            )
    n_windows = sum(b - a - k2 + 1 for a, b in segments)
    n_total = sum(b - a for a, b in segments)

    if cfg.pooled:
        return _stack_pooled(u, v, cfg, segments, binary, n_windows, n_total)
    return _stack_windows(u, v, cfg, segments, binary, n_windows)


def _clamp_rates(rates: np.ndarray, n_windows: int, binary: bool):
    if not binary:
        return rates, ()
    lo = 1.0 / (2.0 * n_windows)
    bad = np.flatnonzero((rates < lo) | (rates > 1.0 - lo))
    if bad.size:
        warnings.warn(
            f"saturated binary channels {bad.tolist()} clamped to "
            f"[{lo:.3e}, {1 - lo:.6f}]",
            RuntimeWarning,
            stacklevel=4,
        )
        rates = np.clip(rates, lo, 1.0 - lo)
    return rates, tuple(int(i) for i in bad)


def _stack_pooled(u, v, cfg, segments, binary, n_windows, n_total):
    k2 = 2 * cfg.k
    q, m = v.shape[1], u.shape[1]
    mean_u = sum(u[a:b].sum(axis=0) for a, b in segments) / n_total
    rate = sum(v[a:b].sum(axis=0) for a, b in segments) / n_total
    rate, clamped = _clamp_rates(rate, n_windows, binary)

    # One statistic per lag, normalized by the total sample count (not the
    # pair count): the biased form keeps every block-Toeplitz stack PSD.
    lam = [np.zeros((q, q)) for _ in range(k2)]
    gam = [np.zeros((m, m)) for _ in range(k2)]
    xpos = [np.zeros((q, m)) for _ in range(k2)]
    xneg = [np.zeros((q, m)) for _ in range(k2)]
    for a, b in segments:
        vs = v[a:b]
        uc = u[a:b] - mean_u
        llen = b - a
        for d in range(k2):
            if d >= llen:
                break
            head_v, tail_v = vs[: llen - d], vs[d:]
            head_u, tail_u = uc[: llen - d], uc[d:]
            lam[d] += head_v.T @ tail_v
            gam[d] += head_u.T @ tail_u
            xpos[d] += head_v.T @ tail_u
            xneg[d] += tail_v.T @ head_u
    lam = [x / n_total for x in lam]
    gam = [x / n_total for x in gam]
    xpos = [x / n_total for x in xpos]
    xneg = [x / n_total for x in xneg]

    e_yy = np.empty((k2 * q, k2 * q))
    cov_uu = np.empty((k2 * m, k2 * m))
    cov_yu = np.empty((k2 * q, k2 * m))
    for i in range(k2):
        for j in range(k2):
            d = j - i
            e_yy[i * q:(i + 1) * q, j * q:(j + 1) * q] = lam[d] if d >= 0 else lam[-d].T
            cov_uu[i * m:(i + 1) * m, j * m:(j + 1) * m] = gam[d] if d >= 0 else gam[-d].T
            cov_yu[i * q:(i + 1) * q, j * m:(j + 1) * m] = xpos[d] if d >= 0 else xneg[-d]
    e_yy = symmetrize(e_yy)
    cov_uu = symmetrize(cov_uu)

    return StackedMoments(
        k=cfg.k, q=q, m=m, pooled=True, binary=binary,
        n_windows=n_windows, n_samples=n_total,
        rate_y=np.tile(rate, k2), mean_u=np.tile(mean_u, k2),
        e_yy=e_yy, cov_uu=cov_uu, cov_yu=cov_yu,
        clamped_channels=clamped,
    )


def _stack_windows(u, v, cfg, segments, binary, n_windows):
    # Materializes every window; meant for modest N (it is the exact,
    # unpooled estimator).
    k2 = 2 * cfg.k
    q, m = v.shape[1], u.shape[1]
    w_rows, u_rows = [], []
    for a, b in segments:
        for t in range(a, b - k2 + 1):
            w_rows.append(v[t:t + k2].reshape(-1))
            u_rows.append(u[t:t + k2].reshape(-1))
    w = np.asarray(w_rows)
    uw = np.asarray(u_rows)
    rate = w.mean(axis=0)
    rate, clamped = _clamp_rates(rate, n_windows, binary)
    mean_u = uw.mean(axis=0)
    uc = uw - mean_u
    return StackedMoments(
        k=cfg.k, q=q, m=m, pooled=False, binary=binary,
        n_windows=n_windows, n_samples=sum(b - a for a, b in segments),
        rate_y=rate, mean_u=mean_u,
        e_yy=symmetrize(w.T @ w / n_windows),
        cov_uu=symmetrize(uc.T @ uc / n_windows),
        cov_yu=w.T @ uc / n_windows,
        clamped_channels=clamped,
    )


def _assemble(k, q, m, mu_u, mu_z, cov_uu, sigma_zu, sigma_zz, link, n_windows):
    s_u = cov_uu.shape[0]
    s_z = sigma_zz.shape[0]
    sigma = np.empty((s_u + s_z, s_u + s_z))
    sigma[:s_u, :s_u] = cov_uu
    sigma[:s_u, s_u:] = sigma_zu.T
    sigma[s_u:, :s_u] = sigma_zu
    sigma[s_u:, s_u:] = sigma_zz
    sigma = symmetrize(sigma)
    min_eig = float(np.linalg.eigvalsh(sigma)[0])
    sigma, repaired = repair_psd(sigma)
    try:
        factor = chol_lower(sigma, name="converted joint moment matrix")
    except NumericalError:
        raise NumericalError(
            "Cholesky of the converted joint moment matrix failed even after "
            f"PSD repair (min eigenvalue before repair {min_eig:.3e})"
        ) from None
    return ConvertedMoments(
        k=k, q=q, m=m, mu_u=mu_u, mu_z=mu_z, sigma=sigma, factor=factor,
        repaired=repaired, min_eig=min_eig, link=link, n_windows=n_windows,
    )


def convert(sm: StackedMoments) -> ConvertedMoments:
    """Convert stacked binary moments to Gaussian-equivalent joint moments.

    Latent means come from the rates, latent correlations from pairwise
    orthant inversion (diagonal fixed at 1 by the probit convention), and
    input-signal covariances from the closed-form density rescaling. The
    assembled joint matrix is symmetrized, eigenvalue-floored at 1e-10 if
    needed, and Cholesky-factored.
    """
    if not sm.binary:
        raise ConfigError("convert expects binary stacked moments")
    k2 = 2 * sm.k
    q, m = sm.q, sm.m
    mu_z = ndtri(sm.rate_y)

    if sm.pooled:
        mu = mu_z[:q]
        dens = np.array([_phi(x) for x in mu])
        for i, dval in enumerate(dens):
            if dval < _DENSITY_FLOOR:
                raise DegenerateChannelError(
                    i, f"channel {i} saturated beyond conversion (phi(mu) = {dval:.3e})"
                )
        # Unique correlation blocks per lag, tiled into the full stack.
        rho = [np.empty((q, q)) for _ in range(k2)]
        lam0 = sm.e_yy[:q, :q]
        rho[0][np.diag_indices(q)] = 1.0
        for a in range(q):
            for b in range(a + 1, q):
                r = latent_corr_from_pair(lam0[a, b], mu[a], mu[b])
                rho[0][a, b] = rho[0][b, a] = r
        for d in range(1, k2):
            lam_d = sm.e_yy[:q, d * q:(d + 1) * q]
            for a in range(q):
                for b in range(q):
                    rho[d][a, b] = latent_corr_from_pair(lam_d[a, b], mu[a], mu[b])
        spos = [sm.cov_yu[:q, d * m:(d + 1) * m] / dens[:, None] for d in range(k2)]
        sneg = [sm.cov_yu[d * q:(d + 1) * q, :m] / dens[:, None] for d in range(k2)]
        sigma_zz = np.empty((k2 * q, k2 * q))
        sigma_zu = np.empty((k2 * q, k2 * m))
        for i in range(k2):
            for j in range(k2):
                d = j - i
                sigma_zz[i * q:(i + 1) * q, j * q:(j + 1) * q] = (
                    rho[d] if d >= 0 else rho[-d].T
                )
                sigma_zu[i * q:(i + 1) * q, j * m:(j + 1) * m] = (
                    spos[d] if d >= 0 else sneg[-d]
                )
    else:
        s_z = k2 * q
        dens = np.array([_phi(x) for x in mu_z])
        for i, dval in enumerate(dens):
            if dval < _DENSITY_FLOOR:
                raise DegenerateChannelError(
                    i % q,
                    f"stacked coordinate {i} saturated beyond conversion "
                    f"(phi(mu) = {dval:.3e})",
                )
        sigma_zz = np.eye(s_z)
        for i in range(s_z):
            for j in range(i + 1, s_z):
                r = latent_corr_from_pair(sm.e_yy[i, j], mu_z[i], mu_z[j])
                sigma_zz[i, j] = sigma_zz[j, i] = r
        sigma_zu = sm.cov_yu / dens[:, None]

    return _assemble(
        sm.k, q, m, sm.mean_u.copy(), mu_z, sm.cov_uu.copy(),
        sigma_zu, symmetrize(sigma_zz), "probit", sm.n_windows,
    )


def gaussian_moments(sm: StackedMoments) -> ConvertedMoments:
    """Joint moments with the observations taken at face value.

    No probit inversion: the signal block is the centered covariance of the
    stacked observations themselves. Applied to binary data this is the
    "pretend it is Gaussian" baseline; applied to real-valued stacks it is
    simply their empirical joint covariance.
    """
    sigma_zz = sm.e_yy - np.outer(sm.rate_y, sm.rate_y)
    return _assemble(
        sm.k, sm.q, sm.m, sm.mean_u.copy(), sm.rate_y.copy(), sm.cov_uu.copy(),
        sm.cov_yu.copy(), symmetrize(sigma_zz), "identity", sm.n_windows,
    )


def conversion_limit(
    params: SystemParams, k: int, input_cov: np.ndarray | None = None
) -> ConvertedMoments:
    """Infinite-data limit of build_hankel_moments followed by convert.

    A Bernoulli(Phi(z)) draw equals the threshold of z + e for a fresh unit
    normal e, so the Gaussian the conversion recovers is z + e, rescaled per
    channel to the unit marginal variance the inversion assumes. Relative to
    the plain moments of z that means lag-zero variances gain +1 and every
    signal row and column is divided by sqrt(1 + var(z_i)). Downstream
    identification therefore sees C and D shrunk by the same per-channel
    factors; the gap closes as var(z_i) grows and is the price of reading
    the system through a binary channel.

    Zero-mean white inputs and strictly stable dynamics are assumed, as in
    stacked_latent_moments.
    """
    sigma_uu, sigma_zu, sigma_zz = stacked_latent_moments(params, k, input_cov)
    sigma_zz = sigma_zz + np.eye(sigma_zz.shape[0])
    scale = np.sqrt(np.diag(sigma_zz))
    sigma_zz = sigma_zz / np.outer(scale, scale)
    sigma_zu = sigma_zu / scale[:, None]
    k2m = 2 * k * params.m
    k2q = 2 * k * params.q
    return _assemble(
        k, params.q, params.m, np.zeros(k2m), np.zeros(k2q), sigma_uu,
        sigma_zu, symmetrize(sigma_zz), "probit", 0,
    )

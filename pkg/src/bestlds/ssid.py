"""Covariance-form subspace identification on the joint moment factor.

The estimator never touches raw data columns: every projection is carried
out on rows of the lower Cholesky factor R of the stacked joint covariance,
whose row blocks stand in for the (U_p, U_f, Z_p, Z_f) data stacks. Any
covariance the algorithm needs is an inner product of R rows, so the whole
fit costs the same regardless of how many samples produced the moments.

Pipeline: oblique projection of future signal rows onto past data along
future inputs, SVD to split off the extended observability map, a shift
regression for A, the first block row for C, a structured least squares on
the impulse-response Toeplitz pattern for B and D, and a state-residual
estimate of the process noise.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import ConfigError, NumericalError
from .linalg import (
    chol_lower,
    lstsq_truncated,
    pinv_truncated,
    repair_psd,
    solve_stationary_cov,
    spectral_radius,
    symmetrize,
)
from .model import SystemParams, TimeSeries
from .moments import (
    ConvertedMoments,
    HankelConfig,
    build_hankel_moments,
    convert,
    gaussian_moments,
)

# Singular values this far (relatively) below the leading one are treated as
# numerically zero when checking that the requested latent dimension is
# actually supported by the projection. The PSD repair floor (1e-10) leaves
# junk directions around 1e-11 relative, so the cut sits well above that.
_RANK_TOL = 1e-8


@dataclass
class SsidResult:
    """Identified system plus the evidence used to pick its dimension.

    singular_values are those of the oblique projection, descending; the
    requested latent dimension is echoed in chosen_p and an advisory elbow
    lives in diagnostics (never applied automatically). timings, when
    filled by the fitting wrappers, holds per-stage wall-clock seconds.
    """

    params: SystemParams
    singular_values: np.ndarray
    chosen_p: int
    diagnostics: dict[str, Any]
    timings: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "singular_values": [float(s) for s in self.singular_values],
            "chosen_p": int(self.chosen_p),
            "diagnostics": self.diagnostics,
            "timings": {k: float(v) for k, v in self.timings.items()},
        }

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def cholesky_R(sigma: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of the joint moment matrix.

    Row order follows the moment assembly: all stacked input blocks (past
    then future), then all stacked signal blocks. Eigenvalues negative at
    roundoff level are floored before factoring; genuinely indefinite input
    is an error.
    """
    sigma = np.asarray(sigma, dtype=float)
    try:
        return chol_lower(sigma, name="joint moment matrix")
    except NumericalError:
        evals = np.linalg.eigvalsh(sigma)
        scale = max(1.0, float(evals[-1]))
        if evals[0] < -1e-8 * scale:
            raise
        repaired, _ = repair_psd(sigma)
        return chol_lower(repaired, name="joint moment matrix")


@dataclass
class _Projection:
    # Oblique projection of the future signal rows and its ingredients, all
    # in square-root (R-row) coordinates.
    o_mat: np.ndarray
    lu: np.ndarray
    svals: np.ndarray
    u_left: np.ndarray
    residual: float
    cond: float


def _row_groups(k: int, q: int, m: int, n_rows: int) -> None:
    expected = 2 * k * (m + q)
    if n_rows != expected:
        raise ConfigError(
            f"factor has {n_rows} rows but k={k}, q={q}, m={m} imply {expected}"
        )


def _oblique(r: np.ndarray, k: int, q: int, m: int) -> _Projection:
    """Project future signal rows onto past data along future inputs.

    The joint least-squares regression of Z_f rows on (W_p, U_f) rows splits
    the predictable part of the future into a past component (the oblique
    projection, whose rank is the latent dimension) and a future-input
    component (the impulse-structure coefficients reused for B and D).
    """
    km, kq = k * m, k * q
    u_rows = r[: 2 * km]
    z_rows = r[2 * km :]
    w_past = np.vstack([u_rows[:km], z_rows[:kq]])
    u_fut = u_rows[km:]
    z_fut = z_rows[kq:]

    stack = np.vstack([w_past, u_fut])
    coeffs = z_fut @ pinv_truncated(stack)
    fitted = coeffs @ stack
    denom = np.linalg.norm(z_fut)
    residual = float(np.linalg.norm(z_fut - fitted) / denom) if denom > 0 else 0.0

    o_mat = coeffs[:, : km + kq] @ w_past
    lu = coeffs[:, km + kq :]

    u_left, svals, _ = np.linalg.svd(o_mat, full_matrices=True)
    s_stack = np.linalg.svd(stack, compute_uv=False)
    cond = float(s_stack[0] / s_stack[-1]) if s_stack[-1] > 0 else np.inf
    return _Projection(
        o_mat=o_mat, lu=lu, svals=svals, u_left=u_left,
        residual=residual, cond=cond,
    )


def hankel_spectrum(
    r: np.ndarray, config: HankelConfig | int, q: int, m: int
) -> np.ndarray:
    """Descending singular values of the oblique projection.

    The number of values clearly above the noise floor indicates the latent
    dimension; the shape of the spectrum is largely insensitive to k.
    """
    cfg = HankelConfig(k=config) if isinstance(config, int) else config
    r = np.asarray(r, dtype=float)
    _row_groups(cfg.k, q, m, r.shape[0])
    return _oblique(r, cfg.k, q, m).svals


def _advisory_p(svals: np.ndarray) -> int:
    # Elbow by largest relative drop between consecutive singular values.
    if len(svals) < 2 or svals[0] <= 0:
        return 1
    tiny = svals[0] * 1e-300
    ratios = svals[:-1] / np.maximum(svals[1:], tiny)
    return int(np.argmax(ratios)) + 1


def _solve_bd(
    proj: _Projection, a: np.ndarray, c: np.ndarray, k: int, q: int, m: int, p: int
) -> tuple[np.ndarray, np.ndarray]:
    """Joint (D; B) least squares on the impulse-Toeplitz structure.

    With the left null basis of the observability map split into k block
    columns L_0..L_{k-1}, block c of its product with the future-input
    coefficients equals L_c D + N_c B, where N_c = sum_{d>=1} L_{c+d} C
    A^{d-1} follows the backward recursion N_c = L_{c+1} C + N_{c+1} A.
    Stacking the k block equations gives one overdetermined system solved
    for (D; B) column-wise, never forming the Toeplitz matrix itself.
    """
    gamma_perp = proj.u_left[:, p:].T
    if gamma_perp.shape[0] == 0:
        raise NumericalError(
            "input-matrix recovery needs k*q > p rows in the projection; "
            "increase the Hankel depth k"
        )
    m_mat = gamma_perp @ proj.lu
    blocks = [gamma_perp[:, i * q : (i + 1) * q] for i in range(k)]
    rows = gamma_perp.shape[0]
    n_c = np.zeros((rows, p))
    lhs_blocks = [None] * k
    for i in range(k - 1, -1, -1):
        lhs_blocks[i] = np.hstack([blocks[i], n_c])
        if i > 0:
            n_c = blocks[i] @ c + n_c @ a
    lhs = np.vstack(lhs_blocks)
    rhs = np.vstack([m_mat[:, i * m : (i + 1) * m] for i in range(k)])
    db = lstsq_truncated(lhs, rhs)
    return db[q:, :], db[:q, :]


def _state_noise(
    r: np.ndarray,
    o_mat: np.ndarray,
    gamma: np.ndarray,
    a: np.ndarray,
    b: np.ndarray,
    k: int,
    q: int,
    m: int,
) -> np.ndarray | None:
    """Process-noise estimate from the one-step state regression residual.

    States at two adjacent reference times come from the oblique projection
    and its shifted variant (one more past block, one fewer future block),
    read through the same observability basis. Returns None when the
    shifted projection cannot support the latent dimension ((k-1) q < p).
    """
    p = a.shape[0]
    if (k - 1) * q < p:
        return None
    km, kq = k * m, k * q
    u_rows = r[: 2 * km]
    z_rows = r[2 * km :]

    w_plus = np.vstack([u_rows[: km + m], z_rows[: kq + q]])
    u_minus = u_rows[km + m :]
    z_minus = z_rows[kq + q :]
    stack = np.vstack([w_plus, u_minus])
    coeffs = z_minus @ pinv_truncated(stack)
    o_next = coeffs[:, : w_plus.shape[0]] @ w_plus

    x_now = pinv_truncated(gamma) @ o_mat
    x_next = pinv_truncated(gamma[: (k - 1) * q]) @ o_next
    u_now = u_rows[km : km + m]
    resid = x_next - a @ x_now
    if m > 0:
        resid = resid - b @ u_now
    q_hat = symmetrize(resid @ resid.T)
    evals, evecs = np.linalg.eigh(q_hat)
    return symmetrize(evecs @ np.diag(np.clip(evals, 0.0, None)) @ evecs.T)


def n4sid(
    r: np.ndarray, config: HankelConfig | int, q: int, m: int, p: int
) -> SsidResult:
    """Covariance-form N4SID with default (identity) weighting.

    Steps: partition the factor rows, obliquely project the future signal
    onto past data along future inputs, SVD, keep the top p directions as
    the extended observability map, regress its shift for A, read C off the
    first block row, solve the impulse-Toeplitz least squares for B and D,
    and estimate the process noise from state residuals. The initial state
    is reported as zero mean with the stationary covariance of the
    identified system.
    """
    cfg = HankelConfig(k=config) if isinstance(config, int) else config
    k = cfg.k
    r = np.asarray(r, dtype=float)
    _row_groups(k, q, m, r.shape[0])
    if p < 1:
        raise ConfigError(f"latent dimension must be at least 1, got {p}")
    if p > k * q:
        raise ConfigError(
            f"latent dimension {p} exceeds the k*q = {k * q} rows of the projection"
        )

    proj = _oblique(r, k, q, m)
    svals = proj.svals
    if svals[p - 1] <= _RANK_TOL * svals[0]:
        raise NumericalError(
            f"oblique projection supports rank {int(np.sum(svals > _RANK_TOL * svals[0]))} "
            f"but p={p} was requested; reduce p or increase N"
        )

    gamma = proj.u_left[:, :p] * np.sqrt(svals[:p])
    a_hat = lstsq_truncated(gamma[:-q], gamma[q:])
    c_hat = gamma[:q].copy()

    if m > 0:
        b_hat, d_hat = _solve_bd(proj, a_hat, c_hat, k, q, m, p)
    else:
        b_hat = np.zeros((p, 0))
        d_hat = np.zeros((q, 0))

    q_hat = _state_noise(r, proj.o_mat, gamma, a_hat, b_hat, k, q, m)
    diagnostics: dict[str, Any] = {
        "weighting": "n4sid",
        "regressor_cond": proj.cond,
        "projection_residual": proj.residual,
        "observability_cond": float(svals[0] / svals[p - 1]),
        "advisory_p": _advisory_p(svals),
    }
    if q_hat is None:
        q_hat = np.eye(p)
        diagnostics["q_noise"] = "unavailable ((k-1)q < p); identity placeholder"
    else:
        diagnostics["q_noise"] = "state-residual estimate"

    # Stationary initial covariance when the estimate is stable; otherwise
    # fall back to the process noise itself rather than extrapolating an
    # unstable recursion.
    sigma_u0 = r[:m] @ r[:m].T if m > 0 else np.zeros((0, 0))
    drive = q_hat + (b_hat @ sigma_u0 @ b_hat.T if m > 0 else 0.0)
    if spectral_radius(a_hat) < 1.0 - 1e-9:
        q0_hat = solve_stationary_cov(a_hat, symmetrize(drive))
        evals, evecs = np.linalg.eigh(q0_hat)
        q0_hat = symmetrize(evecs @ np.diag(np.clip(evals, 0.0, None)) @ evecs.T)
        diagnostics["q0"] = "stationary"
    else:
        q0_hat = q_hat.copy()
        diagnostics["q0"] = "process-noise fallback (estimate not strictly stable)"

    params = SystemParams(
        A=a_hat, B=b_hat, C=c_hat, D=d_hat, Q=q_hat,
        mu0=np.zeros(p), Q0=q0_hat,
    )
    return SsidResult(
        params=params,
        singular_values=svals.copy(),
        chosen_p=p,
        diagnostics=diagnostics,
    )


def fit_bestlds(
    ts: TimeSeries, config: HankelConfig | int, p: int
) -> SsidResult:
    """Full binary pipeline: stack moments, convert, factor, identify.

    Per-stage wall-clock seconds land in the result's timings; everything
    after the single moment pass is independent of the record length.
    """
    cfg = HankelConfig(k=config) if isinstance(config, int) else config
    timings: dict[str, float] = {}
    t0 = time.perf_counter()
    sm = build_hankel_moments(ts, cfg)
    timings["moments"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    conv = convert(sm)
    timings["convert"] = time.perf_counter() - t0

    result = _identify(conv, cfg, p, timings)
    result.diagnostics["link"] = "probit"
    result.diagnostics["n_windows"] = sm.n_windows
    if sm.clamped_channels:
        result.diagnostics["clamped_channels"] = list(sm.clamped_channels)
    return result


def gauss_baseline(
    ts: TimeSeries, config: HankelConfig | int, p: int
) -> SsidResult:
    """Baseline that treats the binary record as real-valued.

    Identical to fit_bestlds except the probit inversion is skipped: the
    signal block of the joint covariance is the raw centered covariance of
    the observations.
    """
    cfg = HankelConfig(k=config) if isinstance(config, int) else config
    timings: dict[str, float] = {}
    t0 = time.perf_counter()
    sm = build_hankel_moments(ts, cfg)
    timings["moments"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    conv = gaussian_moments(sm)
    timings["convert"] = time.perf_counter() - t0

    result = _identify(conv, cfg, p, timings)
    result.diagnostics["link"] = "identity"
    result.diagnostics["n_windows"] = sm.n_windows
    return result


def identify_moments(
    conv: ConvertedMoments, p: int
) -> SsidResult:
    """Run the identification stage on already-converted moments."""
    return _identify(conv, HankelConfig(k=conv.k), p, {})


def _identify(
    conv: ConvertedMoments, cfg: HankelConfig, p: int, timings: dict[str, float]
) -> SsidResult:
    t0 = time.perf_counter()
    r = conv.factor
    timings["factor"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    result = n4sid(r, cfg, conv.q, conv.m, p)
    timings["n4sid"] = time.perf_counter() - t0
    timings["total"] = sum(timings.values())
    result.timings = timings
    return result

"""Identifiability-aware evaluation of fitted systems.

A change of state basis x -> Tx alters (A, B, C) without changing the
input-output law, so raw parameter distances say nothing about fit quality.
Everything here compares only identifiable quantities: the spectrum of A,
the column space of C, the feedthrough D (which subspace identification
recovers in canonical coordinates), the steady-state gain, one-step choice
predictions, and the approximate log evidence of the record.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import log_ndtr

from .errors import ConfigError, NumericalError, ParameterError
from .linalg import symmetrize
from .model import SystemParams, TimeSeries, simulate_noiseless

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass
class ErrorReport:
    """The four identifiability-aware errors between a true and fitted system.

    subspace_angle_C is None when the signal dimension is below the latent
    dimension, where a q-dimensional view cannot pin down a p-dimensional
    column space.
    """

    eig_error_A: float
    subspace_angle_C: float | None
    elem_error_D: float
    gain_error: float

    def to_dict(self) -> dict:
        d = {
            "eig_error_A": self.eig_error_A,
            "elem_error_D": self.elem_error_D,
            "gain_error": self.gain_error,
        }
        if self.subspace_angle_C is not None:
            d["subspace_angle_C"] = self.subspace_angle_C
        return d

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def gain(params: SystemParams) -> np.ndarray:
    """Steady-state input-to-signal map C (I - A)^-1 B + D.

    Similarity-invariant, hence comparable across fits that landed in
    different state bases.
    """
    m_mat = np.eye(params.p) - params.A
    svals = np.linalg.svd(m_mat, compute_uv=False)
    if svals[-1] <= 1e-12 * max(1.0, svals[0]):
        raise NumericalError(
            "I - A is singular (eigenvalue at 1): the steady-state gain "
            "does not exist for this system"
        )
    return params.C @ np.linalg.solve(m_mat, params.B) + params.D


def eig_error(a: np.ndarray, a_hat: np.ndarray) -> float:
    """Mean absolute eigenvalue discrepancy under optimal matching.

    Eigenvalues carry no inherent order, so the two spectra are paired by a
    minimum-cost assignment on |lambda_i - lambda_hat_j| before averaging;
    any fixed ordering would punish harmless permutations.
    """
    a = np.asarray(a, dtype=float)
    a_hat = np.asarray(a_hat, dtype=float)
    if a.shape != a_hat.shape or a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ParameterError(
            f"eig_error needs two square matrices of equal size, "
            f"got {a.shape} and {a_hat.shape}"
        )
    ev_true = np.linalg.eigvals(a)
    ev_est = np.linalg.eigvals(a_hat)
    cost = np.abs(ev_true[:, None] - ev_est[None, :])
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].mean())


def principal_angles(c: np.ndarray, c_hat: np.ndarray) -> np.ndarray:
    """All principal angles between the column spaces, ascending, in radians."""
    c = np.asarray(c, dtype=float)
    c_hat = np.asarray(c_hat, dtype=float)
    if c.shape != c_hat.shape:
        raise ParameterError(f"shape mismatch: {c.shape} vs {c_hat.shape}")
    q, p = c.shape
    if q < p:
        raise ParameterError(
            f"column spaces in {q} dimensions cannot hold rank {p}"
        )
    for name, mat in (("first", c), ("second", c_hat)):
        sv = np.linalg.svd(mat, compute_uv=False)
        if sv[-1] <= 1e-10 * max(1.0, sv[0]):
            raise ParameterError(f"{name} matrix is column rank deficient")
    qc, _ = np.linalg.qr(c)
    qe, _ = np.linalg.qr(c_hat)
    overlap = qc.T @ qe
    cosines = np.sort(np.clip(np.linalg.svd(overlap, compute_uv=False), 0.0, 1.0))[::-1]
    # arccos cannot resolve angles below ~1e-8 (the cosine is within eps of
    # 1 there), so angles up to 45 degrees are read off the orthogonal
    # residual instead, whose singular values are the matching sines.
    sines = np.sort(np.clip(np.linalg.svd(qe - qc @ overlap, compute_uv=False), 0.0, 1.0))
    return np.where(cosines**2 >= 0.5, np.arcsin(sines), np.arccos(cosines))


def subspace_angle(c: np.ndarray, c_hat: np.ndarray) -> float | None:
    """Largest principal angle between the column spaces of C and its estimate.

    Returns None when q < p: the emission map is then wider than the space
    it lives in and the comparison is not defined. The largest angle is the
    conservative summary; principal_angles exposes the full set.
    """
    c = np.asarray(c, dtype=float)
    if c.shape[0] < c.shape[1]:
        return None
    return float(principal_angles(c, c_hat)[-1])


def error_report(true: SystemParams, est: SystemParams) -> ErrorReport:
    """Assemble the four standard errors between a true and estimated system.

    eig_error_A and subspace_angle_C compare identifiable structure; the
    feedthrough and gain errors are mean absolute elementwise differences.
    """
    if (true.p, true.q, true.m) != (est.p, est.q, est.m):
        raise ParameterError(
            f"dimension mismatch: true (p={true.p}, q={true.q}, m={true.m}) "
            f"vs estimate (p={est.p}, q={est.q}, m={est.m})"
        )
    d_err = float(np.mean(np.abs(true.D - est.D))) if true.D.size else 0.0
    g_true, g_est = gain(true), gain(est)
    g_err = float(np.mean(np.abs(g_true - g_est))) if g_true.size else 0.0
    report = ErrorReport(
        eig_error_A=eig_error(true.A, est.A),
        subspace_angle_C=subspace_angle(true.C, est.C),
        elem_error_D=d_err,
        gain_error=g_err,
    )
    values = [report.eig_error_A, report.elem_error_D, report.gain_error]
    if report.subspace_angle_C is not None:
        values.append(report.subspace_angle_C)
    if not all(np.isfinite(v) for v in values):
        raise NumericalError(f"non-finite error report: {report.to_dict()}")
    return report


def impulse_response(
    params: SystemParams, input_dim: int, horizon: int
) -> np.ndarray:
    """Noiseless signal response to a unit pulse on one input channel.

    A unit input arrives on channel input_dim at time 0 from a zero initial
    state; the returned (q, horizon) trace is the signal z over time, whose
    columns are D, CB, CAB, CA^2B, ... on the chosen input column.
    """
    if not 0 <= input_dim < params.m:
        raise ConfigError(
            f"input_dim {input_dim} out of range for m={params.m} channels"
        )
    if horizon < 1:
        raise ConfigError(f"horizon must be positive, got {horizon}")
    u = np.zeros((horizon, params.m))
    u[0, input_dim] = 1.0
    at_rest = replace(params, mu0=np.zeros(params.p))
    return simulate_noiseless(at_rest, u).z.T


def _inverse_mills(v):
    # phi(v) / Phi(v) through log space; past v = -30 the exponent loses
    # precision to cancellation, so the tail uses the Mills asymptotic series.
    v = np.asarray(v, dtype=float)
    scalar = v.ndim == 0
    arr = np.atleast_1d(v)
    lam = np.exp(-0.5 * arr * arr - _LOG_SQRT_2PI - log_ndtr(arr))
    far = arr < -30.0
    if np.any(far):
        t2 = arr[far] * arr[far]
        lam[far] = -arr[far] / (1.0 - 1.0 / t2 + 3.0 / t2**2 - 15.0 / t2**3)
    return float(lam[0]) if scalar else lam


def predict_choices(
    params: SystemParams, ts: TimeSeries, open_loop: bool = False
) -> tuple[np.ndarray, float]:
    """One-step-ahead choice predictions and their accuracy on a record.

    At each step the latent mean is propagated through the dynamics and the
    prediction is the sign of the predicted signal, yhat_t = 1{C xhat + D u_t
    >= 0}. Afterwards the observed y_t corrects the state belief through a
    moment-matched probit update, one channel at a time: each binary outcome
    tilts the Gaussian belief and the tilted distribution is re-projected to
    a Gaussian. With open_loop=True the correction is skipped and the
    prediction runs on inputs alone, which shows how much of the accuracy
    comes from feedback versus the input drive.
    """
    if ts.q != params.q or ts.m != params.m:
        raise ParameterError(
            f"record has (q={ts.q}, m={ts.m}) but params have "
            f"(q={params.q}, m={params.m})"
        )
    a, b, c, d = params.A, params.B, params.C, params.D
    x = params.mu0.copy()
    cov = params.Q0.copy()
    n = ts.n
    y_hat = np.empty((n, params.q), dtype=np.int8)
    starts = set(ts.trial_starts)
    for t in range(n):
        if t in starts:
            x = params.mu0.copy()
            cov = params.Q0.copy()
        elif t > 0:
            x = a @ x + b @ ts.u[t - 1]
            cov = symmetrize(a @ cov @ a.T + params.Q)
        drive = d @ ts.u[t]
        y_hat[t] = (c @ x + drive >= 0.0).astype(np.int8)
        if open_loop:
            continue
        for i in range(params.q):
            pc = cov @ c[i]
            total_var = 1.0 + float(c[i] @ pc)
            root = math.sqrt(total_var)
            sign = 2.0 * ts.y[t, i] - 1.0
            v = sign * (float(c[i] @ x) + drive[i]) / root
            lam = _inverse_mills(v)
            x = x + (sign * lam / root) * pc
            cov = symmetrize(cov - (lam * (lam + v) / total_var) * np.outer(pc, pc))
    accuracy = float(np.mean(y_hat == ts.y))
    return y_hat, accuracy


def log_evidence(params: SystemParams, ts: TimeSeries) -> float:
    """Approximate log evidence of the binary record, in bits per sample.

    Delegates to the Laplace machinery of the EM module: the latent path is
    integrated out around its posterior mode. Higher is better; a fair-coin
    predictor scores -1 bit per sample per channel.
    """
    from .laplace_em import laplace_log_evidence

    return laplace_log_evidence(params, ts)


def save_prediction(path, y_hat: np.ndarray, accuracy: float) -> None:
    """JSON dump of a prediction run (predicted choices plus accuracy)."""
    payload = {
        "accuracy": float(accuracy),
        "y_hat": np.asarray(y_hat, dtype=int).tolist(),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def save_accuracy_csv(path, accuracies) -> None:
    """Per-trial accuracy table, one row per trial."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["trial", "accuracy"])
        for idx, acc in enumerate(accuracies):
            writer.writerow([idx, f"{float(acc):.10g}"])

"""Conventional linear precoders on statistical CSI (mean channel and covariance)."""
from __future__ import annotations

import math

import numpy as np

from .geometry import as_user_set
from .problem import PrecoderResult


def _normalize(P: np.ndarray, p_t: float) -> tuple[np.ndarray, float]:
    nrm2 = float(np.vdot(P, P).real)
    if nrm2 == 0:
        raise ValueError("cannot normalise a zero precoder")
    beta = math.sqrt(p_t / nrm2)
    return beta * P, beta


def mrt(H_mean: np.ndarray, p_t: float) -> PrecoderResult:
    """Matched filter on the mean channel, scaled to the full power budget."""
    if not np.any(H_mean):
        raise ValueError("MRT needs a nonzero channel")
    P, beta = _normalize(H_mean.astype(complex), p_t)
    return PrecoderResult(P, "mrt", beta=beta)


def zf(H_mean: np.ndarray, p_t: float) -> PrecoderResult:
    """Zero forcing ``H (H^H H)^-1`` on the mean channel."""
    m, k = H_mean.shape
    if k > m:
        raise ValueError(f"zero forcing needs K_S <= M_S, got {k} > {m}")
    gram = H_mean.conj().T @ H_mean
    s = np.linalg.svd(H_mean, compute_uv=False)
    if s[-1] <= 1e-10 * s[0]:
        norms = np.linalg.norm(H_mean, axis=0)
        corr = np.abs(gram) / np.outer(norms, norms)
        np.fill_diagonal(corr, 0.0)
        i, j = np.unravel_index(np.argmax(corr), corr.shape)
        raise np.linalg.LinAlgError(
            f"mean channel is rank deficient; users {min(i, j)} and {max(i, j)} are "
            f"collinear (|cos| = {corr[i, j]:.6f})")
    P, beta = _normalize(np.linalg.solve(gram.T, H_mean.T).T, p_t)
    return PrecoderResult(P, "zf", beta=beta)


def regularized_mmse(users, p_t: float, upsilon_sg: np.ndarray | None = None,
                     varsigma: float = 0.0) -> tuple[np.ndarray, float]:
    """``beta (U_ss + s U_sg + K sigma^2 / P_T I)^-1 H`` with full-power ``beta``.

    ``sigma^2`` is the common noise power (mean over users).
    """
    users = as_user_set(users)
    m, k = users.n_antennas, users.n_users
    sigma2 = float(np.mean(users.noise_power))
    A = users.upsilon + (k * sigma2 / p_t) * np.eye(m)
    if varsigma != 0.0 and upsilon_sg is not None:
        A = A + varsigma * upsilon_sg
    Q = np.linalg.solve(A, users.mean_channel)
    P, beta = _normalize(Q, p_t)
    return P, beta


def rzf_mmse(users, p_t: float) -> PrecoderResult:
    P, beta = regularized_mmse(users, p_t)
    return PrecoderResult(P, "mmse", beta=beta, multipliers={"varsigma": 0.0})


def wmmse_baseline(problem, P_init: np.ndarray | None = None) -> PrecoderResult:
    """Weighted-MMSE sum-rate baseline: the WWE iteration with ``mu`` pinned at 0.

    ``problem`` is a :class:`~itsnbf.problem.RobustProblem`; its threshold is
    ignored.
    """
    from .robust import wweia  # robust builds on the MMSE closed form above

    return wweia(problem, P_init=P_init, pin_mu_zero=True, algorithm="wmmse")

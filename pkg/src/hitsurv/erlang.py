"""Weighted Erlang mixtures ``sum_j c_j Erlang(j, lam)(t)``."""

from __future__ import annotations

import numpy as np
from scipy.special import gammainc

K_MAX = 130


class TruncationError(ValueError):
    """Requested truncation order beyond the supported ceiling."""


def check_order(k: int) -> int:
    k = int(k)
    if k < 0:
        raise ValueError("truncation order must be nonnegative")
    if k > K_MAX:
        raise TruncationError(f"truncation order {k} exceeds the ceiling {K_MAX}")
    return k


def erlang_basis(lam: float, t, k: int) -> np.ndarray:
    """Erlang densities of orders ``1..k`` at times ``t``, shape ``(len(t), k)``.

    Column ``j-1`` holds ``lam**j t**(j-1) exp(-lam t) / (j-1)!``, built with
    the recurrence ``term_{j+1} = term_j * lam t / j`` so that no factorial
    or power is ever formed explicitly.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(t < 0):
        raise ValueError("times must be nonnegative")
    out = np.empty((t.shape[0], k))
    if k == 0:
        return out
    x = lam * t
    term = lam * np.exp(-x)
    out[:, 0] = term
    for j in range(1, k):
        term = term * x / j
        out[:, j] = term
    return out


def mixture_density(coeffs: np.ndarray, lam: float, t) -> np.ndarray:
    """Evaluate ``sum_{j>=1} coeffs[j, x] Erlang(j, lam)(t)`` for every column ``x``.

    ``coeffs`` has shape ``(k+1, n_states)``; row 0 (the ``j = 0`` term) is
    ignored.  Returns an array of shape ``(len(t), n_states)``.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    k = coeffs.shape[0] - 1
    basis = erlang_basis(lam, t, k)
    return basis @ coeffs[1:]


def mixture_survival(coeffs: np.ndarray, lam: float, t) -> np.ndarray:
    """``P(T > t | Y_0 = x)`` for the truncated mixture, shape ``(len(t), n_states)``.

    The ``j = 0`` row is a point mass at ``t = 0``; mass never assigned to a
    finite ``j`` (the cure fraction plus the truncated tail) stays in the
    survival function for ever.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    k = coeffs.shape[0] - 1
    t = np.atleast_1d(np.asarray(t, dtype=float))
    cdf = np.ones((t.shape[0], k + 1))
    if k:
        cdf[:, 1:] = gammainc(np.arange(1, k + 1)[None, :], lam * t[:, None])
    return 1.0 - cdf @ coeffs

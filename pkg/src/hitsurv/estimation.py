"""Kernel estimators of the rate, the jump-chain matrix and the hitting-time law.

Given a dataset of censored trajectories and a query covariate ``z``:

* ``kernel_weights`` gives Nadaraya-Watson weights ``K_h(z - Z_i) / sum_j K_h(z - Z_j)``;
* ``estimate_rate`` inverts the weighted mean of ``E_M / M`` and caps it;
* ``estimate_transition_matrix`` is the weighted ratio of transition counts;
* ``estimate_coefficients`` runs the temporal-consistency recursion
  ``c_j(x) = sum_x' p(x, x') c_{j-1}(x')`` for ``x`` outside the observed
  terminal set;
* ``fit`` bundles all of the above into a ``FittedEstimator``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .erlang import K_MAX, check_order, mixture_density, mixture_survival
from .model import Dataset
from .oracle import CoefficientTable, support_partition

DEFAULT_RATE_CAP = 5.0
KERNELS = ("epanechnikov-modified",)


def _ball_constant(dim: int) -> float:
    volume = math.pi ** (dim / 2) / math.gamma(dim / 2 + 1)
    return 1.0 / (volume * (4.0 / 3.0 - dim / (dim + 2.0)))


def kernel_profile(sq_norm, dim: int = 1) -> np.ndarray:
    """Kernel as a function of ``||u||^2``: ``c_p (4/3 - ||u||^2)`` on the unit ball."""
    sq_norm = np.asarray(sq_norm, dtype=float)
    # (4 - 3s) / 6 keeps K(0) = 2/3 and K(1) = 1/6 exact in floating point.
    if dim == 1:
        return np.where(sq_norm <= 1.0, (4.0 - 3.0 * sq_norm) / 6.0, 0.0)
    return np.where(sq_norm <= 1.0, _ball_constant(dim) * (4.0 - 3.0 * sq_norm) / 3.0, 0.0)


def kernel_value(u) -> float:
    """Modified Epanechnikov kernel ``1/2 (4/3 - u^2) 1{|u| <= 1}``.

    For vector ``u`` of length ``p`` the squared Euclidean norm replaces
    ``u^2`` and the constant is chosen so the kernel integrates to one over
    the unit ball.
    """
    u = np.atleast_1d(np.asarray(u, dtype=float))
    return float(kernel_profile(np.dot(u, u), u.shape[0]))


@dataclass(frozen=True)
class KernelConfig:
    bandwidth: float
    rate_cap: float = DEFAULT_RATE_CAP
    kernel: str = "epanechnikov-modified"

    def __post_init__(self):
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")
        if not self.rate_cap > 0:
            raise ValueError("rate cap must be positive")
        if self.kernel not in KERNELS:
            raise ValueError(f"unknown kernel {self.kernel!r}")


class Weights(NamedTuple):
    values: np.ndarray
    empty: bool


def _scaled_kernel(covariates: np.ndarray, z, h: float) -> np.ndarray:
    """``K_h(z - Z_i) = K((z - Z_i) / h) / h^p`` for every row of ``covariates``."""
    dim = covariates.shape[1]
    diff = (np.asarray(z, dtype=float).reshape(1, dim) - covariates) / h
    return kernel_profile(np.einsum("ij,ij->i", diff, diff), dim) / h**dim


def kernel_weights(dataset: Dataset, z, config: KernelConfig, mask=None) -> Weights:
    """Normalised kernel weights; all zeros with ``empty=True`` if no record is within ``h``.

    ``mask`` restricts the normalisation to a subset of records (the others
    get weight zero).
    """
    k = _scaled_kernel(dataset.covariates, z, config.bandwidth)
    if mask is not None:
        k = np.where(mask, k, 0.0)
    total = k.sum()
    if total <= 0:
        return Weights(np.zeros_like(k), True)
    return Weights(k / total, False)


class RateEstimate(NamedTuple):
    value: float
    degenerate: bool


def estimate_rate(dataset: Dataset, z, config: KernelConfig) -> RateEstimate:
    """``(sum_i w_i E_{M_i} / M_i)^{-1}`` capped at ``config.rate_cap``.

    Records without jumps carry no holding-time information and are left out
    of the weights.  With no usable record near ``z`` the cap is returned and
    ``degenerate`` is set.
    """
    usable = dataset.usable
    w = kernel_weights(dataset, z, config, mask=usable)
    if w.empty:
        return RateEstimate(config.rate_cap, True)
    mean_holding = float(np.dot(w.values[usable], dataset.mean_holding[usable]))
    if mean_holding <= 0:
        return RateEstimate(config.rate_cap, True)
    return RateEstimate(min(1.0 / mean_holding, config.rate_cap), False)


def observed_terminal_set(dataset: Dataset) -> frozenset[int]:
    """Final states of the uncensored records."""
    return frozenset(r.states[-1] for r in dataset.records if r.delta)


def estimate_transition_matrix(dataset: Dataset, z, config: KernelConfig, weights: Weights | None = None) -> np.ndarray:
    """Weighted transition-count ratios; rows of never-left states are zero."""
    w = kernel_weights(dataset, z, config) if weights is None else weights
    n = dataset.n_states
    if w.empty:
        return np.zeros((n, n))
    num = np.tensordot(w.values, dataset.transition_counts, axes=1)
    den = num.sum(axis=1)
    out = np.zeros((n, n))
    rows = den > 0
    out[rows] = num[rows] / den[rows, None]
    return out


def estimate_coefficients(p_hat: np.ndarray, a_n, k: int) -> CoefficientTable:
    """Temporal-consistency recursion on an estimated transition matrix."""
    k = check_order(k)
    p_hat = np.asarray(p_hat, dtype=float)
    sums = p_hat.sum(axis=1)
    if np.any((np.abs(sums - 1) > 1e-9) & (sums != 0)):
        raise ValueError("rows of p_hat must sum to one or be identically zero")
    a_n = frozenset(int(a) for a in a_n)
    n = p_hat.shape[0]
    outside = np.ones(n)
    outside[list(a_n)] = 0.0
    values = np.zeros((k + 1, n))
    values[0] = 1.0 - outside
    for j in range(1, k + 1):
        values[j] = (p_hat @ values[j - 1]) * outside
    return CoefficientTable(values, a_n)


@dataclass(frozen=True)
class FittedEstimator:
    z: tuple[float, ...]
    lambda_hat: float
    p_hat: np.ndarray
    a_n: frozenset[int]
    coeffs: CoefficientTable
    h: float
    k: int
    flags: tuple[str, ...] = field(default=())

    @property
    def degenerate(self) -> bool:
        return bool(self.flags)


def fit(dataset: Dataset, z, config: KernelConfig, k: int = K_MAX) -> FittedEstimator:
    """Estimate rate, transition matrix, terminal set and coefficients at ``z``."""
    if len(dataset) == 0:
        raise ValueError("cannot fit an empty dataset")
    k = check_order(k)
    z = tuple(float(v) for v in np.atleast_1d(np.asarray(z, dtype=float)))
    weights = kernel_weights(dataset, z, config)
    rate = estimate_rate(dataset, z, config)
    p_hat = estimate_transition_matrix(dataset, z, config, weights)
    a_n = observed_terminal_set(dataset)
    coeffs = estimate_coefficients(p_hat, a_n, k)
    flags = []
    if weights.empty:
        flags.append("empty-neighbourhood")
    if rate.degenerate:
        flags.append("degenerate-rate")
    if not a_n:
        flags.append("no-terminal-observed")
    return FittedEstimator(
        z=z,
        lambda_hat=rate.value,
        p_hat=p_hat,
        a_n=a_n,
        coeffs=CoefficientTable(coeffs.values, a_n, z),
        h=config.bandwidth,
        k=k,
        flags=tuple(flags),
    )


def plug_in(p: np.ndarray, terminal, lam: float, z=None, k: int = K_MAX, h: float = float("nan")) -> FittedEstimator:
    """Estimator assembled from given (for instance exact) inputs."""
    a_n = frozenset(terminal)
    coeffs = estimate_coefficients(p, a_n, k)
    zt = None if z is None else tuple(float(v) for v in np.atleast_1d(z))
    return FittedEstimator(zt, float(lam), np.asarray(p, dtype=float), a_n, coeffs, h, k)


def estimate_density(fit: FittedEstimator, x: int, t):
    out = mixture_density(fit.coeffs.values[:, [x]], fit.lambda_hat, t)[:, 0]
    return float(out[0]) if np.ndim(t) == 0 else out


def estimate_density_table(fit: FittedEstimator, t) -> np.ndarray:
    return mixture_density(fit.coeffs.values, fit.lambda_hat, t)


def estimate_survival_table(fit: FittedEstimator, t) -> np.ndarray:
    return mixture_survival(fit.coeffs.values, fit.lambda_hat, t)


def estimate_cure_rate(fit: FittedEstimator, x: int) -> float:
    if x in fit.a_n:
        return 0.0
    value = 1.0 - float(fit.coeffs.values[1:, x].sum())
    return min(max(value, 0.0), 1.0)


def isolated_states_vanish(fit: FittedEstimator) -> bool:
    """True when every state cut off from ``a_n`` in the support of ``p_hat`` has zero coefficients."""
    part = support_partition(fit.p_hat, fit.a_n)
    iso = sorted(part.isolated)
    return bool(np.all(fit.coeffs.values[:, iso] == 0.0))

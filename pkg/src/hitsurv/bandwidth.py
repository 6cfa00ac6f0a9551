"""Bandwidth selection by leave-one-out conditional predictive error.

The criterion targets the kernel regression of the mean holding time
``U_j = E_{M_j} / M_j`` on the covariate:

    CPE(h) = sum_j (U_j - m_{h,-j})^2

where ``m_{h,-j}`` is the Nadaraya-Watson prediction with record ``j`` left
out.  By default the prediction is made at ``Z_j``; passing ``at=z`` gives
the fixed-point reading where every left-out prediction is made at ``z``.
Left-out fits with no neighbour inside the bandwidth predict the global
mean of ``U`` over the sample being scored.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .estimation import kernel_profile
from .model import Dataset

N_FOLDS = 10
FOLD_BLOCK = 10


class InsufficientDataError(ValueError):
    pass


@dataclass(frozen=True)
class BandwidthGrid:
    candidates: tuple[float, ...]

    def __post_init__(self):
        c = tuple(float(v) for v in self.candidates)
        if not c:
            raise ValueError("bandwidth grid is empty")
        if min(c) <= 0:
            raise ValueError("bandwidth candidates must be positive")
        if any(b <= a for a, b in zip(c, c[1:])):
            raise ValueError("bandwidth candidates must be strictly increasing")
        object.__setattr__(self, "candidates", c)

    def __len__(self) -> int:
        return len(self.candidates)

    @classmethod
    def default(cls, n: int, dim: int = 1, size: int = 20) -> "BandwidthGrid":
        """``size`` log-spaced values on ``[n^(-1/(2+p)) / 4, 1]``."""
        lo = n ** (-1.0 / (2 + dim)) / 4
        return cls(tuple(np.geomspace(lo, 1.0, size)))


@dataclass(frozen=True)
class BandwidthSelection:
    h: float
    fold_minimizers: tuple[float, ...]
    grid: BandwidthGrid


def _usable_arrays(dataset: Dataset) -> tuple[np.ndarray, np.ndarray]:
    ok = dataset.usable
    return dataset.covariates[ok], dataset.mean_holding[ok]


def _cpe(sq_dist: np.ndarray, u: np.ndarray, h: float, dim: int) -> float:
    return _cpe_from_kernel(kernel_profile(sq_dist / h**2, dim), u)


def _sq_dist(covariates: np.ndarray, at) -> np.ndarray:
    if at is None:
        diff = covariates[:, None, :] - covariates[None, :, :]
        return np.einsum("ijk,ijk->ij", diff, diff)
    at = np.asarray(at, dtype=float).reshape(1, -1)
    d = np.sum((covariates - at) ** 2, axis=1)
    return np.broadcast_to(d, (covariates.shape[0], covariates.shape[0])).copy()


def cpe(dataset: Dataset, h: float, at=None) -> float:
    """Conditional predictive error of bandwidth ``h`` on the usable records."""
    if not h > 0:
        raise ValueError("bandwidth must be positive")
    zs, u = _usable_arrays(dataset)
    if u.shape[0] < 2:
        raise InsufficientDataError("CPE needs at least two records with m >= 1")
    return _cpe(_sq_dist(zs, at), u, h, zs.shape[1])


def cpe_curve(dataset: Dataset, grid: BandwidthGrid, at=None) -> np.ndarray:
    zs, u = _usable_arrays(dataset)
    if u.shape[0] < 2:
        raise InsufficientDataError("CPE needs at least two records with m >= 1")
    d = _sq_dist(zs, at)
    return np.array([_cpe(d, u, h, zs.shape[1]) for h in grid.candidates])


def fold_exclusions(n: int, scheme: str = "blocks") -> list[np.ndarray]:
    """Indices removed from the sample in each of the ten folds.

    ``"blocks"`` drops the fixed blocks ``{10(l-1), .., 10l - 1}`` (0-based),
    so only the first hundred records are ever excluded; ``"tenths"`` splits
    the whole sample into ten contiguous blocks.
    """
    if scheme == "blocks":
        return [np.arange(FOLD_BLOCK * l, min(FOLD_BLOCK * (l + 1), n)) for l in range(N_FOLDS)]
    if scheme == "tenths":
        return np.array_split(np.arange(n), N_FOLDS)
    raise ValueError(f"unknown fold scheme {scheme!r}")


def select_bandwidth(
    dataset: Dataset, grid: BandwidthGrid | None = None, folds: str = "blocks", at=None
) -> BandwidthSelection:
    """Average of the ten per-fold CPE minimisers; ties go to the smaller ``h``."""
    n = len(dataset)
    if n < 20:
        raise InsufficientDataError(f"bandwidth selection needs n >= 20, got {n}")
    grid = BandwidthGrid.default(n, dataset.covariate_dim) if grid is None else grid
    dim = dataset.covariate_dim
    usable = dataset.usable
    u_full = np.where(usable, np.nan_to_num(dataset.mean_holding), 0.0)
    d_full = _sq_dist(dataset.covariates, at)
    # Only usable records act as regressors; each fold then downdates the
    # full-sample sums by the contribution of its excluded block.
    full = []
    for h in grid.candidates:
        w = kernel_profile(d_full / h**2, dim)
        np.fill_diagonal(w, 0.0)
        w[:, ~usable] = 0.0
        full.append((w, w @ u_full, w.sum(axis=1), (w > 0).sum(axis=1)))
    minimizers = []
    for excluded in fold_exclusions(n, folds):
        keep = usable.copy()
        keep[excluded] = False
        idx = np.flatnonzero(keep)
        if idx.size < 2:
            raise InsufficientDataError("a fold keeps fewer than two usable records")
        u = u_full[idx]
        global_mean = u.mean()
        scores = []
        for w, num, den, cnt in full:
            block = w[np.ix_(idx, excluded)]
            num_f = num[idx] - block @ u_full[excluded]
            den_f = den[idx] - block.sum(axis=1)
            empty = cnt[idx] - (block > 0).sum(axis=1) == 0
            pred = np.where(empty, global_mean, num_f / np.where(empty, 1.0, den_f))
            scores.append(np.sum((u - pred) ** 2))
        minimizers.append(grid.candidates[int(np.argmin(scores))])
    return BandwidthSelection(math.fsum(minimizers) / len(minimizers), tuple(minimizers), grid)


def _cpe_from_kernel(w: np.ndarray, u: np.ndarray) -> float:
    # Row j of w weighs the regressors for the prediction left out at j; the
    # diagonal (record j itself) is dropped.
    w = w.copy()
    np.fill_diagonal(w, 0.0)
    den = w.sum(axis=1)
    num = w @ u
    empty = ~(w > 0).any(axis=1)
    pred = np.where(empty, u.mean(), num / np.where(empty, 1.0, den))
    return float(np.sum((u - pred) ** 2))

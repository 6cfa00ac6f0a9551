"""Exact hitting-step coefficients, densities and cure rates of a known model.

Everything here uses the true transition matrix and terminal set.  The
coefficients ``c_j(x, z) = P(S = j | Y_0 = x, Z = z)`` are computed in the
absorbing-chain form ``c_1 = R 1``, ``c_j = Q c_{j-1}`` (``Q`` the
non-terminal block of ``P``), which is independent of the recursion used by
the estimator.  ``monte_carlo_steps`` provides a brute-force cross-check.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.integrate import simpson

from .erlang import K_MAX, check_order, mixture_density
from .model import ModelSpec

TAIL_FLAG_LEVEL = 1e-12
SIMPSON_PANELS = 2**14


@dataclass(frozen=True)
class CoefficientTable:
    """``values[j, x] = c_j(x, z)`` for ``j = 0..k`` over all states."""

    values: np.ndarray
    terminal: frozenset[int]
    z: tuple[float, ...] | None = None

    @property
    def k(self) -> int:
        return self.values.shape[0] - 1

    @property
    def n_states(self) -> int:
        return self.values.shape[1]

    def mass(self) -> np.ndarray:
        """``sum_{j=0}^k c_j(x)`` per state."""
        return self.values.sum(axis=0)

    def hit_mass(self) -> np.ndarray:
        """``sum_{j=1}^k c_j(x)`` per state."""
        return self.values[1:].sum(axis=0)

    def check(self, tol: float = 1e-12) -> list[str]:
        problems = []
        v = self.values
        if v.min() < 0 or v.max() > 1 + tol:
            problems.append("entry outside [0, 1]")
        if np.any(self.mass() > 1 + tol):
            problems.append("coefficient mass above one")
        indicator = np.zeros(self.n_states)
        indicator[list(self.terminal)] = 1.0
        if not np.array_equal(v[0], indicator):
            problems.append("c_0 is not the terminal indicator")
        return problems


class Partition(NamedTuple):
    terminal: frozenset[int]
    connected: frozenset[int]
    isolated: frozenset[int]


class CureRate(NamedTuple):
    value: float
    tail_flag: bool


class DecayFit(NamedTuple):
    m_hat: float
    r_hat: float
    passed: bool
    degenerate: bool


def _as_z(spec: ModelSpec, z) -> tuple[float, ...]:
    return tuple(float(v) for v in np.atleast_1d(np.asarray(z, dtype=float)))


def absorbing_coefficients(P: np.ndarray, terminal, k: int) -> np.ndarray:
    """Hitting-step law of the chain ``P`` killed on ``terminal``, shape ``(k+1, n)``."""
    P = np.asarray(P, dtype=float)
    n = P.shape[0]
    term = sorted(terminal)
    free = [x for x in range(n) if x not in terminal]
    out = np.zeros((k + 1, n))
    out[0, term] = 1.0
    if k == 0 or not free:
        return out
    Q = P[np.ix_(free, free)]
    c = P[np.ix_(free, term)].sum(axis=1)
    out[1, free] = c
    for j in range(2, k + 1):
        c = Q @ c
        out[j, free] = c
    return out


def true_coefficients(spec: ModelSpec, z, k: int) -> CoefficientTable:
    k = check_order(k)
    P = spec.transition_fn(z)
    return CoefficientTable(absorbing_coefficients(P, spec.terminal_set, k), spec.terminal_set, _as_z(spec, z))


def true_density(spec: ModelSpec, z, x: int, t, k: int = K_MAX):
    """Truncated hitting-time density ``f_T(t, x, z)`` (scalar ``t`` gives a float)."""
    k = check_order(k)
    table = true_coefficients(spec, z, k)
    out = mixture_density(table.values[:, [x]], float(spec.rate_fn(z)), t)[:, 0]
    return float(out[0]) if np.ndim(t) == 0 else out


def true_density_table(spec: ModelSpec, z, t, k: int = K_MAX) -> np.ndarray:
    """Truncated density at times ``t`` for every starting state, shape ``(len(t), n_states)``."""
    table = true_coefficients(spec, z, check_order(k))
    return mixture_density(table.values, float(spec.rate_fn(z)), t)


def support_partition(P: np.ndarray, terminal) -> Partition:
    """Split states into terminal / connected-to-terminal / isolated by reachability.

    Edges are the strictly positive entries of ``P``.  The search runs
    backwards from the terminal set over predecessor edges.
    """
    P = np.asarray(P)
    n = P.shape[0]
    terminal = frozenset(terminal)
    preds = [np.flatnonzero(P[:, y] > 0) for y in range(n)]
    reached = set(terminal)
    queue = deque(terminal)
    connected = set()
    while queue:
        y = queue.popleft()
        for x in preds[y]:
            x = int(x)
            if x in terminal:
                continue
            if x not in connected:
                connected.add(x)
            if x not in reached:
                reached.add(x)
                queue.append(x)
    isolated = frozenset(range(n)) - terminal - connected
    return Partition(terminal, frozenset(connected), isolated)


def reachable_partition(spec: ModelSpec, z) -> Partition:
    return support_partition(spec.transition_fn(z), spec.terminal_set)


def true_cure_rate(spec: ModelSpec, z, x: int, k: int = K_MAX) -> CureRate:
    """``P(T = inf | Y_0 = x, Z = z)`` with the series truncated at ``k``.

    ``tail_flag`` is set when ``c_k(x, z) > 1e-12``, i.e. when the
    neglected tail may still matter.
    """
    k = check_order(k)
    if x in spec.terminal_set:
        return CureRate(0.0, False)
    part = reachable_partition(spec, z)
    if x in part.isolated:
        return CureRate(1.0, False)
    table = true_coefficients(spec, z, k)
    value = 1.0 - float(table.values[1:, x].sum())
    return CureRate(min(max(value, 0.0), 1.0), bool(table.values[k, x] > TAIL_FLAG_LEVEL))


def geometric_decay_check(table: CoefficientTable) -> DecayFit:
    """Fit ``log sup_x c_j ~ log m + j log r`` on the tail ``j >= k/2``.

    Exact zeros are skipped.  A tail with fewer than two nonzero points is a
    degenerate pass with ``r_hat = 0``.
    """
    k = table.k
    if k < 20:
        raise ValueError("geometric decay fit needs k >= 20")
    j = np.arange(k // 2, k + 1)
    sup = table.values[j].max(axis=1)
    keep = sup > 0
    if keep.sum() < 2:
        return DecayFit(0.0, 0.0, True, True)
    slope, intercept = np.polyfit(j[keep], np.log(sup[keep]), 1)
    return DecayFit(float(np.exp(intercept)), float(np.exp(slope)), bool(slope < 0), False)


def truncation_tail_bound(lam: float, fit: DecayFit, k: int) -> float:
    """``lam m^2 r^(2k+1) / (2 (1 - r))`` from a decay fit."""
    if fit.degenerate or not fit.passed:
        return float("inf")
    m, r = fit.m_hat, fit.r_hat
    return lam * m**2 * r ** (2 * k + 1) / (2 * (1 - r))


def horizon(k: int, lam: float) -> float:
    """Integration horizon ``(k + 10 sqrt(k)) / lam`` for order-``k`` Erlang mixtures."""
    return (k + 10 * np.sqrt(k)) / lam


def simpson_integral(f, t_max: float, panels: int = SIMPSON_PANELS) -> float:
    """Composite Simpson rule of a vectorised ``f`` over ``[0, t_max]``."""
    if panels % 2:
        raise ValueError("Simpson's rule needs an even panel count")
    t = np.linspace(0.0, t_max, panels + 1)
    return float(simpson(f(t), x=t))


def density_mass(spec: ModelSpec, z, x: int, k: int = K_MAX, panels: int = SIMPSON_PANELS) -> float:
    """Quadrature of the truncated density over ``[0, T_max]``."""
    lam = float(spec.rate_fn(z))
    return simpson_integral(lambda t: true_density(spec, z, x, t, k), horizon(max(k, 1), lam), panels)


# --- Monte Carlo cross-check --------------------------------------------------


def monte_carlo_steps(
    P: np.ndarray, terminal, start: int, n_walks: int, max_steps: int, rng=None
) -> np.ndarray:
    """Simulate ``n_walks`` jump-chain walks from ``start``; return their hitting steps.

    Walks still outside ``terminal`` after ``max_steps`` moves get the value
    ``max_steps + 1``.  Walkers sitting in a state with ``P[x, x] == 1`` are
    frozen, since they can never move again.
    """
    rng = np.random.default_rng(rng)
    P = np.asarray(P, dtype=float)
    n = P.shape[0]
    cum = np.cumsum(P, axis=1)
    cum[:, -1] = np.inf
    is_terminal = np.zeros(n, dtype=bool)
    is_terminal[list(terminal)] = True
    stuck = np.diag(P) == 1.0
    steps = np.full(n_walks, max_steps + 1, dtype=np.int64)
    if is_terminal[start]:
        steps[:] = 0
        return steps
    idx = np.arange(n_walks)
    pos = np.full(n_walks, start, dtype=np.int64)
    for step in range(1, max_steps + 1):
        if idx.size == 0:
            break
        u = rng.random(idx.size)
        pos = (u[:, None] >= cum[pos]).sum(axis=1)
        hit = is_terminal[pos]
        steps[idx[hit]] = step
        alive = ~hit & ~stuck[pos]
        idx, pos = idx[alive], pos[alive]
    return steps

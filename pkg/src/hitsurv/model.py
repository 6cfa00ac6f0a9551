"""Covariate-indexed Markov models and censored first-hitting-time simulation.

A model is a finite state space with a terminal subset, a covariate law on
``[0, 1]^p``, a rate ``z -> lambda_z`` shared by every state, a jump-chain
transition matrix ``z -> P(z)`` and a shifted-Poisson law for the censoring
step ``L``.  Each simulated individual walks the jump chain until it enters
the terminal set or has made ``L`` jumps, whichever comes first.
"""

from __future__ import annotations

import dataclasses
import functools
import itertools
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .expr import Expression, ExpressionError, compile_matrix

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

MODEL_SCHEMA = "hitsurv-model/1"
ROW_SUM_TOL = 1e-12


class ConfigurationError(ValueError):
    """Malformed model or experiment configuration."""


@dataclass(frozen=True)
class CovariateLaw:
    """Law of each covariate coordinate: ``uniform`` on [0, 1] or ``beta(a, b)``."""

    name: str = "uniform"
    a: float = 1.0
    b: float = 1.0

    def __post_init__(self):
        if self.name not in ("uniform", "beta"):
            raise ConfigurationError(f"unknown covariate law {self.name!r}")
        if self.name == "beta" and (self.a <= 0 or self.b <= 0):
            raise ConfigurationError("beta parameters must be positive")

    def sample(self, rng: np.random.Generator, dim: int) -> np.ndarray:
        if self.name == "uniform":
            return rng.random(dim)
        return rng.beta(self.a, self.b, size=dim)


@dataclass(frozen=True)
class LimitLaw:
    """Censoring step ``L = base + Poisson(poisson_mean)``."""

    base: int = 0
    poisson_mean: float = 1.0

    def __post_init__(self):
        if self.base < 0 or self.poisson_mean <= 0:
            raise ConfigurationError("limit law needs base >= 0 and poisson_mean > 0")

    def sample(self, rng: np.random.Generator) -> int:
        return self.base + int(rng.poisson(self.poisson_mean))


@dataclass(frozen=True)
class ModelSpec:
    """Full generative description of a covariate-indexed hitting-time model.

    States are indexed ``0..n_states-1`` everywhere in the library; ``labels``
    only affects what is written to files and reports.  ``initial`` is the law
    of the starting state; ``None`` means uniform over the non-terminal states.
    """

    name: str
    n_states: int
    terminal_set: frozenset[int]
    rate: str
    transition: tuple[tuple[str, ...], ...]
    covariate_dim: int = 1
    covariate_law: CovariateLaw = field(default_factory=CovariateLaw)
    limit_law: LimitLaw = field(default_factory=LimitLaw)
    labels: tuple[int, ...] | None = None
    initial: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.n_states < 1:
            raise ConfigurationError("n_states must be positive")
        if self.covariate_dim < 1:
            raise ConfigurationError("covariate_dim must be positive")
        terminal = frozenset(int(a) for a in self.terminal_set)
        if not terminal:
            raise ConfigurationError("terminal set must be nonempty")
        if not terminal <= set(range(self.n_states)):
            raise ConfigurationError(f"terminal set {sorted(terminal)} outside 0..{self.n_states - 1}")
        object.__setattr__(self, "terminal_set", terminal)
        rows = tuple(tuple(str(c) for c in row) for row in self.transition)
        if len(rows) != self.n_states or any(len(r) != self.n_states for r in rows):
            raise ConfigurationError(f"transition must be {self.n_states}x{self.n_states}")
        object.__setattr__(self, "transition", rows)
        labels = tuple(range(self.n_states)) if self.labels is None else tuple(int(x) for x in self.labels)
        if len(labels) != self.n_states or len(set(labels)) != self.n_states:
            raise ConfigurationError("labels must be distinct, one per state")
        object.__setattr__(self, "labels", labels)
        if self.initial is not None:
            init = np.asarray(self.initial, dtype=float)
            if init.shape != (self.n_states,) or init.min() < 0 or abs(init.sum() - 1) > 1e-9:
                raise ConfigurationError("initial law must be a probability vector over the states")
            object.__setattr__(self, "initial", tuple(float(v) for v in init))
        try:
            object.__setattr__(self, "_rate", Expression(self.rate, self.covariate_dim))
            object.__setattr__(self, "_matrix", compile_matrix(rows, self.covariate_dim))
        except ExpressionError as exc:
            raise ConfigurationError(f"model {self.name!r}: {exc}") from exc

    def rate_fn(self, z) -> float | np.ndarray:
        return self._rate(self._as_covariate(z))

    def transition_fn(self, z) -> np.ndarray:
        return self._matrix(self._as_covariate(z))

    def _as_covariate(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if z.ndim == 0:
            z = z.reshape(1)
        if z.ndim == 1 and self.covariate_dim == 1 and z.shape[0] != 1:
            z = z.reshape(-1, 1)
        return z

    @property
    def non_terminal(self) -> list[int]:
        return [x for x in range(self.n_states) if x not in self.terminal_set]

    def initial_law(self) -> np.ndarray:
        if self.initial is not None:
            return np.asarray(self.initial)
        p = np.zeros(self.n_states)
        p[self.non_terminal] = 1.0
        if p.sum() == 0:  # every state terminal
            p[:] = 1.0
        return p / p.sum()

    def label_of(self, state: int) -> int:
        return self.labels[state]

    def index_of(self, label: int) -> int:
        return self.labels.index(int(label))

    def default_grid(self) -> np.ndarray:
        """101 equispaced points per unit square (rounded per axis for p > 1)."""
        per_axis = max(2, round(101 ** (1 / self.covariate_dim)))
        axis = np.linspace(0.0, 1.0, per_axis if self.covariate_dim > 1 else 101)
        return np.array(list(itertools.product(axis, repeat=self.covariate_dim)))

    def with_entry(self, row: int, col: int, source: str) -> "ModelSpec":
        """Copy of the model with one transition entry replaced."""
        rows = [list(r) for r in self.transition]
        rows[row][col] = source
        return dataclasses.replace(self, transition=tuple(tuple(r) for r in rows))

    def with_terminal(self, terminal: Sequence[int]) -> "ModelSpec":
        return dataclasses.replace(self, terminal_set=frozenset(terminal))


@dataclass(frozen=True)
class Violation:
    z: tuple[float, ...]
    row: int | None
    kind: str
    magnitude: float

    def __str__(self) -> str:
        where = f"row {self.row}" if self.row is not None else "rate"
        return f"z={self.z} {where}: {self.kind} (magnitude {self.magnitude:.3g})"


def validate_model(spec: ModelSpec, grid=None) -> list[Violation]:
    """Check rates and transition rows on a covariate grid.

    Returns one violation per (grid point, row, defect); an empty list means
    every row is a probability vector and the rate is positive everywhere.
    """
    grid = spec.default_grid() if grid is None else np.asarray(grid, dtype=float)
    grid = grid.reshape(-1, spec.covariate_dim)
    if grid.shape[0] == 0:
        raise ValueError("validation grid is empty")
    if grid.min() < 0 or grid.max() > 1:
        raise ValueError("validation grid leaves the covariate domain [0, 1]^p")
    rates = np.atleast_1d(spec._rate(grid))
    mats = spec._matrix(grid)
    out: list[Violation] = []
    for g, z in enumerate(grid):
        key = tuple(float(v) for v in z)
        lam = rates[g]
        if not np.isfinite(lam) or lam <= 0:
            out.append(Violation(key, None, "rate not positive", float(lam)))
        for i, row in enumerate(mats[g]):
            if not np.all(np.isfinite(row)):
                out.append(Violation(key, i, "non-finite entry", float("nan")))
                continue
            if row.min() < 0:
                out.append(Violation(key, i, "negative entry", float(-row.min())))
            if row.max() > 1:
                out.append(Violation(key, i, "entry above one", float(row.max() - 1)))
            dev = abs(row.sum() - 1.0)
            if dev > ROW_SUM_TOL:
                out.append(Violation(key, i, "row sum", float(dev)))
    return out


# --- observations -----------------------------------------------------------


@dataclass(frozen=True)
class ObservationRecord:
    """One censored trajectory: covariate, visited states, hitting time, delta.

    ``limit`` is the drawn censoring step ``L`` (debug metadata, ``None``
    when the record was read from a file).
    """

    z: tuple[float, ...]
    states: tuple[int, ...]
    hit_time: float
    delta: bool
    limit: int | None = None

    def __post_init__(self):
        if len(self.states) < 1:
            raise ValueError("a record holds at least the initial state")
        if self.hit_time < 0:
            raise ValueError("hit_time must be nonnegative")

    @property
    def m(self) -> int:
        return len(self.states) - 1


@dataclass(frozen=True)
class Dataset:
    records: tuple[ObservationRecord, ...]
    n_states: int
    labels: tuple[int, ...] | None = None
    seed: int | None = None
    model: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        if self.labels is None:
            object.__setattr__(self, "labels", tuple(range(self.n_states)))
        dims = {len(r.z) for r in self.records}
        if len(dims) > 1:
            raise ValueError("records disagree on covariate dimension")
        for r in self.records:
            if max(r.states) >= self.n_states or min(r.states) < 0:
                raise ValueError(f"record state outside 0..{self.n_states - 1}")

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def covariate_dim(self) -> int:
        return len(self.records[0].z) if self.records else 1

    @functools.cached_property
    def covariates(self) -> np.ndarray:
        return np.array([r.z for r in self.records], dtype=float).reshape(len(self), -1)

    @functools.cached_property
    def jumps(self) -> np.ndarray:
        return np.array([r.m for r in self.records], dtype=int)

    @functools.cached_property
    def hit_times(self) -> np.ndarray:
        return np.array([r.hit_time for r in self.records], dtype=float)

    @functools.cached_property
    def deltas(self) -> np.ndarray:
        return np.array([r.delta for r in self.records], dtype=bool)

    @functools.cached_property
    def usable(self) -> np.ndarray:
        """Mask of records carrying holding-time information (``m >= 1``)."""
        return self.jumps >= 1

    @functools.cached_property
    def mean_holding(self) -> np.ndarray:
        """Per-record ``E_M / M``; NaN for records without jumps."""
        out = np.full(len(self), np.nan)
        ok = self.usable
        out[ok] = self.hit_times[ok] / self.jumps[ok]
        return out

    @functools.cached_property
    def transition_counts(self) -> np.ndarray:
        """``counts[j, x, x']`` = number of observed ``x -> x'`` jumps in record ``j``."""
        counts = np.zeros((len(self), self.n_states, self.n_states))
        for j, r in enumerate(self.records):
            s = np.asarray(r.states)
            np.add.at(counts[j], (s[:-1], s[1:]), 1.0)
        return counts

    def subset(self, index) -> "Dataset":
        idx = np.arange(len(self))[index]
        return Dataset(tuple(self.records[i] for i in idx), self.n_states, self.labels, self.seed, self.model)


# --- simulation ---------------------------------------------------------------


def _rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def _walk(
    spec: ModelSpec,
    z: np.ndarray,
    cum: np.ndarray,
    lam: float,
    rng: np.random.Generator,
    start: int | None,
    init_cum: np.ndarray,
) -> ObservationRecord:
    # cum holds the row-wise cumulative sums of P(z).
    limit = spec.limit_law.sample(rng)
    if start is None:
        start = min(int(np.searchsorted(init_cum, rng.random(), side="right")), spec.n_states - 1)
    states = [start]
    y = start
    terminal = spec.terminal_set
    while y not in terminal and len(states) - 1 < limit:
        row = cum[y]
        y = min(int(np.searchsorted(row, rng.random() * row[-1], side="right")), spec.n_states - 1)
        states.append(y)
    m = len(states) - 1
    hit_time = float(rng.exponential(1.0 / lam, size=m).sum()) if m else 0.0
    return ObservationRecord(
        z=tuple(float(v) for v in z),
        states=tuple(states),
        hit_time=hit_time,
        delta=states[-1] in terminal,
        limit=limit,
    )


def _check_covariate(spec: ModelSpec, z) -> np.ndarray:
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if z.shape != (spec.covariate_dim,):
        raise ValueError(f"covariate must have dimension {spec.covariate_dim}")
    return z


def simulate_trajectory(spec: ModelSpec, z, rng=None, start: int | None = None) -> ObservationRecord:
    """Simulate one censored trajectory at covariate ``z``.

    Draw order is fixed: censoring step ``L``, initial state (unless forced
    with ``start``), jump-chain moves, then the ``M`` exponential holding
    times.  Hitting ``A`` on the ``L``-th jump counts as uncensored.
    """
    return simulate_at(spec, z, 1, rng, start)[0]


def simulate_at(spec: ModelSpec, z, count: int, rng=None, start: int | None = None) -> list[ObservationRecord]:
    """``count`` independent trajectories sharing the covariate ``z``."""
    z = _check_covariate(spec, z)
    if start is not None and not 0 <= start < spec.n_states:
        raise ValueError(f"start state {start} outside the state space")
    gen = _rng(rng)
    cum = np.cumsum(spec.transition_fn(z), axis=1)
    lam = float(spec.rate_fn(z))
    init_cum = np.cumsum(spec.initial_law())
    return [_walk(spec, z, cum, lam, gen, start, init_cum) for _ in range(count)]


def simulate_dataset(spec: ModelSpec, n: int, rng=None) -> Dataset:
    """Draw ``n`` independent records, each with its own covariate.

    All covariates are drawn first, then the trajectories in record order.
    ``rng`` may be a seed (stored in the dataset metadata) or a Generator.
    """
    if n < 1:
        raise ValueError("n must be positive")
    seed = rng if isinstance(rng, (int, np.integer)) else None
    gen = _rng(rng)
    zs = np.array([spec.covariate_law.sample(gen, spec.covariate_dim) for _ in range(n)])
    cums = np.cumsum(spec._matrix(zs), axis=2)
    lams = np.atleast_1d(spec._rate(zs))
    init_cum = np.cumsum(spec.initial_law())
    records = tuple(_walk(spec, zs[i], cums[i], float(lams[i]), gen, None, init_cum) for i in range(n))
    return Dataset(records, spec.n_states, spec.labels, None if seed is None else int(seed), spec.name)


# --- built-in models ----------------------------------------------------------

# Row 2 of model a and rows 1 and 6 of model b are normalised by their row
# sums so that every row is a probability vector.
_MODEL_A = (
    ("0", "z / (1 + z**2)", "0", "(1 + z**2 - z) / (1 + z**2)", "0", "0"),
    ("0", "0.5 / (1 + z + z**2)", "(0.4 + z) / (1 + z + z**2)", "0", "(0.1 + z**2) / (1 + z + z**2)", "0"),
    ("0.4", "0.3 / (2 + z)", "(0.6 + 0.6*z) / (2 + z)", "0", "0", "0.3 / (2 + z)"),
    ("0.3", "0.5", "0", "0", "0.2", "0"),
    ("0", "0", "0", "(1 + z) / (3 + z)", "0", "2 / (3 + z)"),
    ("0", "0", "0.3", "0", "0.5", "0.2"),
)

_MODEL_B = (
    ("0", "(1.5 + z) / (2 + z + z**3)", "(0.5 + 0.3*z**3) / (2 + z + z**3)", "0", "0",
     "0.7*z**3 / (2 + z + z**3)", "0"),
    ("0.5 / (1 + z)**2", "0", "0", "(0.3 + 1.5*z) / (1 + z)**2", "(0.5*z + 0.5*z**2) / (1 + z)**2", "0",
     "(0.2 + 0.5*z**2) / (1 + z)**2"),
    ("0", "0", "0.2", "0.4 / (1 + z)", "0", "(0.4 + 0.8*z) / (1 + z)", "0"),
    ("0.1 + 0.3*sqrt(z)", "0", "0.3 + 0.1*sqrt(z)", "0", "0", "0", "0.6 - 0.4*sqrt(z)"),
    ("0", "0", "0", "0", "1", "0", "0"),
    ("0", "1", "0", "0", "0", "0", "0"),
    ("0", "0", "0", "0", "0.2", "0.8", "0"),
)


def model_a() -> ModelSpec:
    """Irreducible six-state model with uniform covariate and Lipschitz entries."""
    return ModelSpec(
        name="model-a",
        n_states=6,
        terminal_set=frozenset({4, 5}),
        rate="1 + z",
        transition=_MODEL_A,
        covariate_law=CovariateLaw("uniform"),
        limit_law=LimitLaw(base=5, poisson_mean=2.0),
        labels=(1, 2, 3, 4, 5, 6),
    )


def model_b() -> ModelSpec:
    """Seven-state model with an absorbing non-terminal state and Beta(1.4, 2.7) covariate."""
    return ModelSpec(
        name="model-b",
        n_states=7,
        terminal_set=frozenset({5, 6}),
        rate="0.4 + 2*z**0.75",
        transition=_MODEL_B,
        covariate_law=CovariateLaw("beta", 1.4, 2.7),
        limit_law=LimitLaw(base=6, poisson_mean=1.0),
        labels=(1, 2, 3, 4, 5, 6, 7),
    )


BUILTIN_MODELS = {"model-a": model_a, "model-b": model_b}


def parse_model(data: dict, source: str = "<model>") -> ModelSpec:
    """Build a model from the decoded TOML schema documented in ``models/README.md``."""
    schema = data.get("schema", MODEL_SCHEMA)
    if schema != MODEL_SCHEMA:
        raise ConfigurationError(f"{source}: unsupported schema {schema!r}")
    try:
        n_states = int(data["n_states"])
        labels = tuple(int(x) for x in data.get("labels", range(n_states)))
        if len(labels) != n_states:
            raise ConfigurationError(f"{source}: expected {n_states} labels")
        terminal = frozenset(labels.index(int(a)) for a in data["terminal"])
        cov = data.get("covariate", {})
        law = CovariateLaw(cov.get("law", "uniform"), float(cov.get("a", 1.0)), float(cov.get("b", 1.0)))
        lim = data.get("limit", {})
        limit = LimitLaw(int(lim.get("base", 0)), float(lim.get("poisson_mean", 1.0)))
        initial = data.get("initial")
        return ModelSpec(
            name=str(data.get("name", source)),
            n_states=n_states,
            terminal_set=terminal,
            rate=str(data["rate"]),
            transition=tuple(tuple(str(c) for c in row) for row in data["transition"]),
            covariate_dim=int(data.get("covariate_dim", 1)),
            covariate_law=law,
            limit_law=limit,
            labels=labels,
            initial=None if initial is None else tuple(float(v) for v in initial),
        )
    except KeyError as exc:
        raise ConfigurationError(f"{source}: missing key {exc.args[0]!r}") from None
    except ValueError as exc:
        if isinstance(exc, ConfigurationError):
            raise
        raise ConfigurationError(f"{source}: {exc}") from None


def load_model(name_or_path: str | Path) -> ModelSpec:
    """Return a built-in model by name, or parse a model TOML file."""
    key = str(name_or_path)
    if key in BUILTIN_MODELS:
        return BUILTIN_MODELS[key]()
    path = Path(key)
    if not path.is_file():
        raise ConfigurationError(f"unknown model {key!r} (built-ins: {', '.join(BUILTIN_MODELS)})")
    with path.open("rb") as fh:
        try:
            data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigurationError(f"{path}: {exc}") from None
    return parse_model(data, str(path))

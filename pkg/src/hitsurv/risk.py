"""Replicated estimation study: integrated risk, coefficient error, rate ratio.

``run_experiment`` simulates ``replicates`` datasets for each sample size,
selects one bandwidth per dataset (or one per query point when
``per_z_bandwidth`` is set), fits at every query covariate and scores the
fit against the exact model.  Every (n, replicate) pair draws from its own
stream ``SeedSequence([master_seed, n, replicate])`` so results do not
depend on execution order or worker count.
"""

from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy.integrate import simpson
from scipy.optimize import brentq

from .bandwidth import BandwidthGrid, InsufficientDataError, select_bandwidth
from .erlang import K_MAX, check_order, mixture_density
from .estimation import DEFAULT_RATE_CAP, FittedEstimator, KernelConfig, estimate_cure_rate, fit
from .model import ConfigurationError, ModelSpec, load_model, simulate_dataset
from .oracle import SIMPSON_PANELS, horizon, true_coefficients

try:
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

EXPERIMENT_SCHEMA = "hitsurv-experiment/1"
WORKERS_ENV = "HITSURV_WORKERS"
METRICS = ("I_risk", "coeff_sup_err", "lambda_ratio")
WHISKER_RULE = "tukey-1.5iqr"
HEAD_FRACTION = 16


@dataclass(frozen=True)
class ExperimentConfig:
    model: str = "model-a"
    sample_sizes: tuple[int, ...] = (100, 200, 400, 800)
    replicates: int = 50
    z_grid: tuple[float, ...] = (0.2, 0.4, 0.6, 0.8)
    k: int = K_MAX
    master_seed: int = 0
    panels: int = SIMPSON_PANELS
    rate_cap: float = DEFAULT_RATE_CAP
    bandwidth_grid: tuple[float, ...] | None = None
    folds: str = "blocks"
    per_z_bandwidth: bool = False

    def __post_init__(self):
        if self.replicates < 1:
            raise ConfigurationError("replicates must be >= 1")
        if not self.sample_sizes or min(self.sample_sizes) < 1:
            raise ConfigurationError("sample sizes must be positive")
        if self.panels < 2 or self.panels % 2:
            raise ConfigurationError("panels must be a positive even number")
        if self.folds not in ("blocks", "tenths"):
            raise ConfigurationError(f"unknown fold scheme {self.folds!r}")
        check_order(self.k)
        object.__setattr__(self, "sample_sizes", tuple(int(n) for n in self.sample_sizes))
        object.__setattr__(self, "z_grid", tuple(float(z) for z in self.z_grid))
        if self.bandwidth_grid is not None:
            object.__setattr__(self, "bandwidth_grid", tuple(float(h) for h in self.bandwidth_grid))


def load_experiment_config(path: str | Path) -> ExperimentConfig:
    with open(path, "rb") as fh:
        try:
            data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigurationError(f"{path}: {exc}") from None
    schema = data.pop("schema", EXPERIMENT_SCHEMA)
    if schema != EXPERIMENT_SCHEMA:
        raise ConfigurationError(f"{path}: unsupported schema {schema!r}")
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigurationError(f"{path}: unknown keys {sorted(unknown)}")
    for key in ("sample_sizes", "z_grid", "bandwidth_grid"):
        if key in data:
            data[key] = tuple(data[key])
    return ExperimentConfig(**data)


# --- per-fit statistics ---------------------------------------------------------


def integrated_risk(
    fit: FittedEstimator, spec: ModelSpec, z, k: int = K_MAX, panels: int = SIMPSON_PANELS
) -> float:
    """Simpson quadrature of ``t -> sup_x (f_hat(t, x) - f(t, x))^2``.

    The reference density is the exact one truncated at ``k``; the range is
    ``[0, (k + 10 sqrt k) / min(lambda_hat, lambda_z)]``.  The supremum has
    kinks where the maximising state changes, so the range is first cut at
    those points and composite Simpson runs on each smooth piece.
    """
    k = check_order(k)
    lam = float(spec.rate_fn(z))
    truth_c = true_coefficients(spec, z, k).values
    est_c = fit.coeffs.values

    def sq_err(t):
        return (mixture_density(est_c, fit.lambda_hat, t) - mixture_density(truth_c, lam, t)) ** 2

    t_max = horizon(max(k, 1), min(fit.lambda_hat, lam))
    head = t_max / HEAD_FRACTION
    # Half of the panels go to the first sixteenth of the range, where the
    # densities peak, and half to the long tail.
    pieces = np.linspace(0.0, head, panels // 2 + 1), np.linspace(head, t_max, panels // 2 + 1)
    cuts = []
    for t in pieces:
        cuts += _kinks(sq_err, t, sq_err(t))
    edges = sorted({0.0, head, t_max, *cuts})
    total = 0.0
    for lo, hi in zip(edges, edges[1:]):
        scale = HEAD_FRACTION / 2 if hi <= head else HEAD_FRACTION / (2 * (HEAD_FRACTION - 1))
        m = max(2, 2 * math.ceil(panels * scale * (hi - lo) / t_max / 2))
        ts = np.linspace(lo, hi, m + 1)
        total += float(simpson(sq_err(ts).max(axis=1), x=ts))
    return total


def _kinks(sq_err, t: np.ndarray, err: np.ndarray) -> list[float]:
    top = err.argmax(axis=1)
    cuts = []
    for i in np.flatnonzero(top[:-1] != top[1:]):
        a, b = top[i], top[i + 1]

        def gap(s, a=a, b=b):
            e = sq_err(np.array([s]))[0]
            return e[a] - e[b]

        ga, gb = gap(t[i]), gap(t[i + 1])
        if ga == 0 or gb == 0 or ga * gb > 0:
            continue
        root = brentq(gap, t[i], t[i + 1], xtol=1e-13, rtol=1e-15)
        if t[i] < root < t[i + 1]:
            cuts.append(root)
    return cuts


def coefficient_sup_error(fit: FittedEstimator, spec: ModelSpec, z, k: int = K_MAX) -> float:
    """``max_{x, 1 <= j <= k} (c_hat_j(x) - c_j(x))^2``."""
    k = check_order(k)
    truth = true_coefficients(spec, z, k).values[1:]
    est = np.zeros_like(truth)
    rows = min(k, fit.coeffs.k)
    est[:rows] = fit.coeffs.values[1 : rows + 1]
    return float(np.max((est - truth) ** 2))


def lambda_ratio(fit: FittedEstimator, spec: ModelSpec, z) -> float:
    lam = float(spec.rate_fn(z))
    if lam <= 0:
        raise ValueError("true rate must be positive")
    return fit.lambda_hat / lam


# --- report -------------------------------------------------------------------


@dataclass(frozen=True)
class RiskRow:
    model: str
    n: int
    z: float
    replicate: int
    h_selected: float
    lambda_hat: float
    lambda_ratio: float
    I_risk: float
    coeff_sup_err: float
    a_n_correct: bool
    coeff_mass_max: float
    cure_min: float
    cure_max: float
    status: str = "ok"

    def key(self) -> tuple:
        return (self.n, self.z, self.replicate)


@dataclass
class RiskReport:
    rows: list[RiskRow] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    def select(self, n: int | None = None, z: float | None = None, scored_only: bool = True) -> list[RiskRow]:
        """Rows matching ``n`` and ``z``; by default only rows that carry statistics."""
        return [
            r for r in self.rows
            if (n is None or r.n == n)
            and (z is None or r.z == z)
            and (not scored_only or not r.status.startswith("insufficient"))
        ]

    def values(self, metric: str, n: int, z: float) -> np.ndarray:
        return np.array([getattr(r, metric) for r in self.select(n, z)], dtype=float)

    def to_csv(self) -> str:
        buf = io.StringIO()
        names = [f.name for f in fields(RiskRow)]
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(names)
        for row in self.rows:
            writer.writerow([_fmt(v) for v in asdict(row).values()])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "RiskReport":
        """Inverse of ``to_csv``."""
        kinds = {f.name: f.type for f in fields(RiskRow)}
        parse = {"int": int, "float": float, "bool": lambda v: v == "1", "str": str}
        rows = [
            RiskRow(**{k: parse[kinds[k]](v) for k, v in rec.items()})
            for rec in csv.DictReader(io.StringIO(text))
        ]
        return cls(rows)

    def boxplots(self) -> list[dict]:
        out = []
        sizes = sorted({r.n for r in self.rows})
        zs = sorted({r.z for r in self.rows})
        for metric in METRICS:
            for n in sizes:
                for z in zs:
                    vals = self.values(metric, n, z)
                    if vals.size:
                        out.append({"metric": metric, "n": n, "z": z, **boxplot_stats(vals)})
        return out

    def boxplots_csv(self) -> str:
        buf = io.StringIO()
        cols = ["metric", "n", "z", "q1", "median", "q3", "lo_whisker", "hi_whisker"]
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(cols)
        for entry in self.boxplots():
            writer.writerow([_fmt(entry[c]) for c in cols])
        return buf.getvalue()


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def boxplot_stats(values) -> dict[str, float]:
    """Quartiles and Tukey whiskers (most extreme points within 1.5 IQR of the box, never inside it)."""
    v = np.sort(np.asarray(values, dtype=float))
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    iqr = q3 - q1
    # Clamp to the box when interpolated quartiles sit outside the data kept.
    lo = min(v[v >= q1 - 1.5 * iqr].min(), q1)
    hi = max(v[v <= q3 + 1.5 * iqr].max(), q3)
    return {"q1": float(q1), "median": float(med), "q3": float(q3), "lo_whisker": float(lo), "hi_whisker": float(hi)}


# --- experiment ---------------------------------------------------------------


def replicate_rng(master_seed: int, n: int, replicate: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), int(n), int(replicate)]))


def _failed_rows(config: ExperimentConfig, spec: ModelSpec, n: int, rep: int, status: str) -> list[RiskRow]:
    nan = math.nan
    return [
        RiskRow(spec.name, n, z, rep, nan, nan, nan, nan, nan, False, nan, nan, nan, status)
        for z in config.z_grid
    ]


def run_replicate(config: ExperimentConfig, n: int, rep: int) -> list[RiskRow]:
    """All rows of one simulated dataset."""
    spec = load_model(config.model)
    data = simulate_dataset(spec, n, replicate_rng(config.master_seed, n, rep))
    grid = None if config.bandwidth_grid is None else BandwidthGrid(config.bandwidth_grid)
    try:
        shared_h = None if config.per_z_bandwidth else select_bandwidth(data, grid, config.folds).h
    except InsufficientDataError as exc:
        return _failed_rows(config, spec, n, rep, f"insufficient-data: {exc}")
    rows = []
    for z in config.z_grid:
        try:
            h = shared_h if shared_h is not None else select_bandwidth(data, grid, config.folds, at=z).h
        except InsufficientDataError as exc:
            rows.extend(r for r in _failed_rows(config, spec, n, rep, f"insufficient-data: {exc}") if r.z == z)
            continue
        est = fit(data, z, KernelConfig(h, config.rate_cap), config.k)
        cures = [estimate_cure_rate(est, x) for x in range(spec.n_states)]
        rows.append(
            RiskRow(
                model=spec.name,
                n=n,
                z=z,
                replicate=rep,
                h_selected=h,
                lambda_hat=est.lambda_hat,
                lambda_ratio=lambda_ratio(est, spec, z),
                I_risk=integrated_risk(est, spec, z, config.k, config.panels),
                coeff_sup_err=coefficient_sup_error(est, spec, z, config.k),
                a_n_correct=est.a_n == spec.terminal_set,
                coeff_mass_max=float(est.coeffs.mass().max()),
                cure_min=min(cures),
                cure_max=max(cures),
                status="ok" if not est.flags else "flagged: " + ",".join(est.flags),
            )
        )
    return rows


def _run_task(args) -> list[RiskRow]:
    return run_replicate(*args)


def default_workers() -> int:
    value = os.environ.get(WORKERS_ENV)
    return max(1, int(value)) if value else 1


def run_experiment(config: ExperimentConfig, workers: int | None = None) -> RiskReport:
    """Run the full sweep; rows come back sorted by (n, z, replicate)."""
    load_model(config.model)  # fail fast on an unknown model
    tasks = [(config, n, rep) for n in config.sample_sizes for rep in range(config.replicates)]
    workers = default_workers() if workers is None else workers
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_run_task, tasks, chunksize=max(1, len(tasks) // (4 * workers))))
    else:
        chunks = [_run_task(t) for t in tasks]
    rows = sorted((r for chunk in chunks for r in chunk), key=RiskRow.key)
    return RiskReport(rows)

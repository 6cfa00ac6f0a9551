"""Command line entry point: ``hitsurv {simulate,estimate,oracle,bandwidth,bench}``.

Every command writes its outputs plus a ``*.manifest.json`` file recording
the arguments, inputs, seed and version needed to reproduce them.  All
randomness comes from ``--seed`` (or the experiment config's
``master_seed``); the only environment variable read is ``HITSURV_WORKERS``.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .bandwidth import BandwidthGrid, InsufficientDataError, select_bandwidth
from .dataio import DatasetFormatError, read_dataset, write_dataset
from .erlang import K_MAX, TruncationError
from .estimation import (
    DEFAULT_RATE_CAP,
    KernelConfig,
    estimate_cure_rate,
    estimate_density_table,
    estimate_survival_table,
    fit,
)
from .model import ConfigurationError, load_model, simulate_dataset
from .oracle import true_coefficients, true_density_table
from .risk import WHISKER_RULE, load_experiment_config, run_experiment

log = logging.getLogger("hitsurv")

CSV_VERSION = "1"


@dataclass
class RunManifest:
    command: str
    argv: list[str]
    config: str | None = None
    inputs: list[str] = field(default_factory=list)
    outputs: list[str] = field(default_factory=list)
    seed: int | None = None
    version: str = __version__
    csv_version: str = CSV_VERSION
    duration_s: float = 0.0
    extra: dict = field(default_factory=dict)

    def write(self, path: Path) -> None:
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")


def manifest_path(output: Path) -> Path:
    return output.with_name(output.name + ".manifest.json")


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _csv_text(header: list[str], rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


# --- commands -----------------------------------------------------------------


def cmd_simulate(args, manifest: RunManifest) -> None:
    spec = load_model(args.model)
    data = simulate_dataset(spec, args.n, args.seed)
    out = Path(args.output)
    write_dataset(data, out)
    manifest.seed = args.seed
    manifest.outputs = [str(out)]
    manifest.extra = {"model": spec.name, "n": args.n, "censored_fraction": float(1 - data.deltas.mean())}


def cmd_estimate(args, manifest: RunManifest) -> None:
    data = read_dataset(args.data)
    labels = data.labels
    zs = args.z
    flags_global = []
    if args.h is not None:
        h = args.h
    else:
        try:
            h = select_bandwidth(data, folds=args.folds).h
        except InsufficientDataError as exc:
            h = BandwidthGrid.default(max(len(data), 1), data.covariate_dim).candidates[-1]
            flags_global.append("bandwidth-fallback")
            log.warning("bandwidth selection impossible (%s); using h=%g", exc, h)
    config = KernelConfig(h, args.rate_cap)
    times = np.linspace(0.0, args.t_max, args.t_points)
    summary, curves = [], []
    for z in zs:
        est = fit(data, z, config, args.k)
        flags = flags_global + list(est.flags)
        if flags:
            log.warning("z=%g: %s", z, ",".join(flags))
        a_n = ",".join(str(labels[s]) for s in sorted(est.a_n))
        dens = estimate_density_table(est, times)
        surv = estimate_survival_table(est, times)
        for x in range(data.n_states):
            summary.append([z, h, est.lambda_hat, a_n, labels[x], estimate_cure_rate(est, x), ";".join(flags)])
            for i, t in enumerate(times):
                curves.append([z, labels[x], float(t), float(dens[i, x]), float(surv[i, x])])
    out = Path(args.output)
    out.write_text(_csv_text(["z", "h", "lambda_hat", "a_n", "state", "cure_rate", "flags"], summary))
    curves_out = Path(args.curves) if args.curves else out.with_name(out.stem + "_curves.csv")
    curves_out.write_text(_csv_text(["z", "state", "t", "density", "survival"], curves))
    manifest.inputs = [str(args.data)]
    manifest.outputs = [str(out), str(curves_out)]
    manifest.seed = data.seed
    manifest.extra = {"h": h, "k": args.k, "rate_cap": args.rate_cap, "z": zs}


def cmd_oracle(args, manifest: RunManifest) -> None:
    spec = load_model(args.model)
    table = true_coefficients(spec, args.z, args.k)
    rows = [
        [j, spec.label_of(x), float(table.values[j, x])]
        for j in range(table.k + 1)
        for x in range(spec.n_states)
    ]
    out = Path(args.output)
    out.write_text(_csv_text(["j", "state", "value"], rows))
    manifest.outputs = [str(out)]
    if args.density:
        times = np.linspace(0.0, args.t_max, args.t_points)
        dens = true_density_table(spec, args.z, times, args.k)
        drows = [[float(t), spec.label_of(x), float(dens[i, x])] for i, t in enumerate(times) for x in range(spec.n_states)]
        Path(args.density).write_text(_csv_text(["t", "state", "value"], drows))
        manifest.outputs.append(str(args.density))
    manifest.extra = {"model": spec.name, "z": args.z, "k": args.k}


def cmd_bandwidth(args, manifest: RunManifest) -> None:
    data = read_dataset(args.data)
    grid = BandwidthGrid(tuple(args.grid)) if args.grid else None
    sel = select_bandwidth(data, grid, folds=args.folds, at=args.at)
    rows = [[i + 1, h] for i, h in enumerate(sel.fold_minimizers)] + [["mean", sel.h]]
    text = _csv_text(["fold", "h"], rows)
    manifest.inputs = [str(args.data)]
    if args.output:
        Path(args.output).write_text(text)
        manifest.outputs = [str(args.output)]
    else:
        sys.stdout.write(text)
    manifest.seed = data.seed
    manifest.extra = {"grid": list(sel.grid.candidates), "folds": args.folds}


def cmd_bench(args, manifest: RunManifest) -> None:
    config = load_experiment_config(args.config)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = run_experiment(config, workers=args.workers)
    report_path = out_dir / "report.csv"
    box_path = out_dir / "boxplots.csv"
    report_path.write_text(report.to_csv())
    box_path.write_text(report.boxplots_csv())
    failed = sum(1 for r in report.rows if r.status != "ok")
    if failed:
        log.warning("%d of %d rows flagged", failed, len(report))
    manifest.config = str(args.config)
    manifest.seed = config.master_seed
    manifest.outputs = [str(report_path), str(box_path)]
    manifest.extra = {"experiment": asdict(config), "rows": len(report), "whisker_rule": WHISKER_RULE}


# --- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hitsurv", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a censored dataset")
    p.add_argument("--model", required=True, help="built-in name (model-a, model-b) or model TOML file")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="fit the kernel estimators on a dataset file")
    p.add_argument("--data", required=True)
    p.add_argument("--z", type=_floats, default=[0.2, 0.4, 0.6, 0.8], help="comma-separated query points")
    p.add_argument("--k", type=int, default=K_MAX)
    p.add_argument("--h", type=float, default=None, help="fixed bandwidth (default: CPE selection)")
    p.add_argument("--rate-cap", type=float, default=DEFAULT_RATE_CAP)
    p.add_argument("--folds", choices=("blocks", "tenths"), default="blocks")
    p.add_argument("--t-max", type=float, default=10.0)
    p.add_argument("--t-points", type=int, default=101)
    p.add_argument("-o", "--output", required=True, help="per-(z, state) summary CSV")
    p.add_argument("--curves", help="density/survival CSV (default: <output>_curves.csv)")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("oracle", help="exact coefficients and density of a model")
    p.add_argument("--model", required=True)
    p.add_argument("--z", type=float, required=True)
    p.add_argument("--k", type=int, default=K_MAX)
    p.add_argument("--t-max", type=float, default=10.0)
    p.add_argument("--t-points", type=int, default=101)
    p.add_argument("-o", "--output", required=True, help="coefficient CSV (j, state, value)")
    p.add_argument("--density", help="density CSV (t, state, value)")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("bandwidth", help="tenfold CPE bandwidth selection")
    p.add_argument("--data", required=True)
    p.add_argument("--grid", type=_floats, default=None, help="comma-separated candidates")
    p.add_argument("--folds", choices=("blocks", "tenths"), default="blocks")
    p.add_argument("--at", type=float, default=None, help="evaluate left-out predictions at this z")
    p.add_argument("-o", "--output", default=None)
    p.set_defaults(func=cmd_bandwidth)

    p = sub.add_parser("bench", help="replicated risk study from an experiment TOML")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--workers", type=int, default=None, help="processes (default: $HITSURV_WORKERS or 1)")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    manifest = RunManifest(command=args.command, argv=argv)
    start = time.perf_counter()
    try:
        args.func(args, manifest)
    except (ConfigurationError, DatasetFormatError, InsufficientDataError, TruncationError, OSError, ValueError) as exc:
        print(f"hitsurv {args.command}: error: {exc}", file=sys.stderr)
        return 1
    manifest.duration_s = round(time.perf_counter() - start, 3)
    if manifest.outputs:
        manifest.write(manifest_path(Path(manifest.outputs[0])))
    return 0


if __name__ == "__main__":
    sys.exit(main())

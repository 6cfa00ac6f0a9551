"""Line-delimited dataset files.

Layout (one header line, then one record per line)::

    # hitsurv-dataset v1 p=1 n_states=6 labels=1,2,3,4,5,6 seed=7 model=model-a
    0.4317 ; 1 ; 3.0812 ; 2,3,1,4,5

Record fields are ``z_1,..,z_p ; delta ; hit_time ; y_0,y_1,..,y_m`` with
states written as labels.  Floats are written with ``repr`` so a dataset
round-trips bit for bit.
"""

from __future__ import annotations

from pathlib import Path

from .model import Dataset, ObservationRecord

DATASET_MAGIC = "hitsurv-dataset"
DATASET_VERSION = "v1"


class DatasetFormatError(ValueError):
    def __init__(self, path, lineno: int, message: str):
        super().__init__(f"{path}:{lineno}: {message}")
        self.lineno = lineno


def format_dataset(ds: Dataset) -> str:
    labels = ds.labels
    header = [
        f"# {DATASET_MAGIC} {DATASET_VERSION}",
        f"p={ds.covariate_dim}",
        f"n_states={ds.n_states}",
        "labels=" + ",".join(str(x) for x in labels),
    ]
    if ds.seed is not None:
        header.append(f"seed={ds.seed}")
    if ds.model is not None:
        header.append(f"model={ds.model}")
    lines = [" ".join(header)]
    for r in ds.records:
        lines.append(
            " ; ".join(
                [
                    ",".join(repr(float(v)) for v in r.z),
                    "1" if r.delta else "0",
                    repr(float(r.hit_time)),
                    ",".join(str(labels[s]) for s in r.states),
                ]
            )
        )
    return "\n".join(lines) + "\n"


def write_dataset(ds: Dataset, path: str | Path) -> None:
    Path(path).write_text(format_dataset(ds))


def _parse_header(line: str, path) -> dict[str, str]:
    parts = line.lstrip("#").split()
    if len(parts) < 2 or parts[0] != DATASET_MAGIC:
        raise DatasetFormatError(path, 1, f"missing '{DATASET_MAGIC}' header")
    if parts[1] != DATASET_VERSION:
        raise DatasetFormatError(path, 1, f"unsupported dataset version {parts[1]!r}")
    meta = {}
    for item in parts[2:]:
        key, sep, value = item.partition("=")
        if not sep:
            raise DatasetFormatError(path, 1, f"bad header field {item!r}")
        meta[key] = value
    if "n_states" not in meta:
        raise DatasetFormatError(path, 1, "header lacks n_states")
    return meta


def parse_dataset(text: str, path="<dataset>") -> Dataset:
    lines = text.splitlines()
    if not lines:
        raise DatasetFormatError(path, 1, "empty file")
    meta = _parse_header(lines[0], path)
    n_states = int(meta["n_states"])
    labels = tuple(int(x) for x in meta["labels"].split(",")) if "labels" in meta else tuple(range(n_states))
    if len(labels) != n_states:
        raise DatasetFormatError(path, 1, "labels do not match n_states")
    index = {lab: i for i, lab in enumerate(labels)}
    p = int(meta.get("p", 1))
    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        fields = [f.strip() for f in line.split(";")]
        if len(fields) != 4:
            raise DatasetFormatError(path, lineno, f"expected 4 ';'-separated fields, got {len(fields)}")
        try:
            z = tuple(float(v) for v in fields[0].split(","))
            if fields[1] not in ("0", "1"):
                raise ValueError(f"delta must be 0 or 1, got {fields[1]!r}")
            delta = fields[1] == "1"
            hit_time = float(fields[2])
            states = tuple(index[int(s)] for s in fields[3].split(","))
        except KeyError as exc:
            raise DatasetFormatError(path, lineno, f"unknown state label {exc.args[0]}") from None
        except ValueError as exc:
            raise DatasetFormatError(path, lineno, str(exc)) from None
        if len(z) != p:
            raise DatasetFormatError(path, lineno, f"expected {p} covariate values, got {len(z)}")
        if hit_time < 0:
            raise DatasetFormatError(path, lineno, "negative hit_time")
        records.append(ObservationRecord(z, states, hit_time, delta))
    seed = int(meta["seed"]) if "seed" in meta else None
    return Dataset(tuple(records), n_states, labels, seed, meta.get("model"))


def read_dataset(path: str | Path) -> Dataset:
    return parse_dataset(Path(path).read_text(), path)

import csv
import json

import numpy as np
import pytest

from hitsurv.cli import main, manifest_path
from hitsurv.dataio import read_dataset
from hitsurv.model import load_model

from .reference import simulate_vectorised

PERFECT_MODEL = """\
schema = "hitsurv-model/1"
name = "triangle"
n_states = 3
labels = [1, 2, 3]
terminal = [3]
rate = "2"
transition = [
  ["0", "0.5", "0.5"],
  ["0.5", "0", "0.5"],
  ["0", "0", "1"],
]
"""

# Every jump of the model appears once, with E_M / M = 1/2 = 1 / rate.
PERFECT_DATA = """\
# hitsurv-dataset v1 p=1 n_states=3 labels=1,2,3
0.5 ; 1 ; 1.0 ; 1,2,3
0.5 ; 1 ; 1.0 ; 2,1,3
"""


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def run(*argv):
    assert main([str(a) for a in argv]) == 0


class TestSimulate:
    def test_writes_dataset_and_manifest(self, tmp_path):
        out = tmp_path / "d.txt"
        run("simulate", "--model", "model-a", "--n", 100, "--seed", 7, "-o", out)
        ds = read_dataset(out)
        assert len(ds) == 100 and ds.seed == 7
        manifest = json.loads(manifest_path(out).read_text())
        assert manifest["command"] == "simulate" and manifest["seed"] == 7
        assert manifest["outputs"] == [str(out)]

    def test_deterministic(self, tmp_path):
        a, b = tmp_path / "a.txt", tmp_path / "b.txt"
        run("simulate", "--model", "model-a", "--n", 100, "--seed", 7, "-o", a)
        run("simulate", "--model", "model-a", "--n", 100, "--seed", 7, "-o", b)
        assert a.read_bytes() == b.read_bytes()

    def test_model_file(self, tmp_path):
        out = tmp_path / "d.txt"
        run("simulate", "--model", "models/model-b.toml", "--n", 50, "--seed", 1, "-o", out)
        assert read_dataset(out).n_states == 7

    def test_censored_fraction_model_b(self, tmp_path):
        out = tmp_path / "d.txt"
        run("simulate", "--model", "model-b", "--n", 800, "--seed", 3, "-o", out)
        observed = 1 - read_dataset(out).deltas.mean()
        spec = load_model("model-b")
        _, final, _, _ = simulate_vectorised(
            spec.transition_fn, None, spec.terminal_set, 7, lambda rng, size: rng.beta(1.4, 2.7, size),
            6, 1.0, 10**6, np.random.default_rng(5),
        )
        p = 1 - np.isin(final, list(spec.terminal_set)).mean()
        sigma = np.sqrt(p * (1 - p) / 800)
        assert abs(observed - p) <= 3 * sigma

    def test_unknown_model(self, tmp_path, capsys):
        assert main(["simulate", "--model", "nope", "--n", "5", "-o", str(tmp_path / "d.txt")]) == 1
        assert "error" in capsys.readouterr().err


class TestOracle:
    def test_coefficient_table_shape(self, tmp_path):
        out = tmp_path / "c.csv"
        run("oracle", "--model", "model-a", "--z", 0.5, "--k", 130, "-o", out)
        rows = read_csv(out)
        assert len(rows) == 131 * 6
        assert list(rows[0]) == ["j", "state", "value"]
        assert manifest_path(out).exists()

    def test_rejects_large_k(self, tmp_path):
        assert main(["oracle", "--model", "model-a", "--z", "0.5", "--k", "131", "-o", str(tmp_path / "c.csv")]) == 1


class TestEstimate:
    def test_single_record_flags(self, tmp_path):
        data = tmp_path / "one.txt"
        data.write_text("# hitsurv-dataset v1 p=1 n_states=6 labels=1,2,3,4,5,6\n0.9 ; 0 ; 1.0 ; 1,2\n")
        out = tmp_path / "e.csv"
        run("estimate", "--data", data, "--z", "0.1", "-o", out)
        rows = read_csv(out)
        assert len(rows) == 6
        flags = rows[0]["flags"].split(";")
        assert {"bandwidth-fallback", "no-terminal-observed"} <= set(flags)

    def test_perfect_dataset_matches_oracle(self, tmp_path):
        model, data = tmp_path / "tri.toml", tmp_path / "tri.txt"
        model.write_text(PERFECT_MODEL)
        data.write_text(PERFECT_DATA)
        est, curves = tmp_path / "e.csv", tmp_path / "curves.csv"
        run("estimate", "--data", data, "--z", "0.5", "--h", 1.0, "--t-max", 8, "--t-points", 33,
            "-o", est, "--curves", curves)
        dens = tmp_path / "dens.csv"
        run("oracle", "--model", model, "--z", 0.5, "--t-max", 8, "--t-points", 33, "-o", tmp_path / "c.csv",
            "--density", dens)
        summary = read_csv(est)
        assert all(float(r["lambda_hat"]) == 2.0 and r["a_n"] == "3" and r["flags"] == "" for r in summary)
        got = {(r["state"], float(r["t"])): float(r["density"]) for r in read_csv(curves)}
        want = {(r["state"], float(r["t"])): float(r["value"]) for r in read_csv(dens)}
        assert got.keys() == want.keys()
        for key, value in want.items():
            assert got[key] == pytest.approx(value, rel=1e-12, abs=1e-300)

    def test_malformed_line(self, tmp_path, capsys):
        data = tmp_path / "bad.txt"
        data.write_text("# hitsurv-dataset v1 p=1 n_states=6\n0.5 ; 1 ; 1.0 ; 0,4\n0.5 ; oops\n")
        assert main(["estimate", "--data", str(data), "-o", str(tmp_path / "e.csv")]) == 1
        assert f"{data}:3:" in capsys.readouterr().err

    def test_model_a_recovers_terminal_set(self, tmp_path):
        hits = 0
        for seed in range(5):
            data, out = tmp_path / f"d{seed}.txt", tmp_path / f"e{seed}.csv"
            run("simulate", "--model", "model-a", "--n", 800, "--seed", seed, "-o", data)
            run("estimate", "--data", data, "--z", "0.5", "--t-points", 3, "-o", out)
            hits += all(r["a_n"] == "5,6" for r in read_csv(out))
        assert hits >= 4

    def test_output_deterministic(self, tmp_path):
        data = tmp_path / "d.txt"
        run("simulate", "--model", "model-b", "--n", 200, "--seed", 2, "-o", data)
        for name in ("a", "b"):
            run("estimate", "--data", data, "--z", "0.3,0.7", "-o", tmp_path / f"{name}.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
        assert (tmp_path / "a_curves.csv").read_bytes() == (tmp_path / "b_curves.csv").read_bytes()


class TestBandwidth:
    def test_folds_and_mean(self, tmp_path):
        data, out = tmp_path / "d.txt", tmp_path / "h.csv"
        run("simulate", "--model", "model-a", "--n", 200, "--seed", 7, "-o", data)
        run("bandwidth", "--data", data, "-o", out)
        rows = read_csv(out)
        assert [r["fold"] for r in rows] == [str(i) for i in range(1, 11)] + ["mean"]
        folds = [float(r["h"]) for r in rows[:10]]
        assert float(rows[-1]["h"]) == pytest.approx(np.mean(folds), rel=1e-15)

    def test_too_small(self, tmp_path):
        data = tmp_path / "d.txt"
        run("simulate", "--model", "model-a", "--n", 10, "--seed", 7, "-o", data)
        assert main(["bandwidth", "--data", str(data), "-o", str(tmp_path / "h.csv")]) == 1


class TestBench:
    def test_smoke(self, tmp_path):
        out = tmp_path / "bench"
        run("bench", "--config", "configs/smoke.toml", "--out", out)
        rows = read_csv(out / "report.csv")
        assert len(rows) == 2
        box = read_csv(out / "boxplots.csv")
        assert {r["metric"] for r in box} == {"I_risk", "coeff_sup_err", "lambda_ratio"}
        manifest = json.loads(manifest_path(out / "report.csv").read_text())
        assert manifest["extra"]["whisker_rule"] == "tukey-1.5iqr"
        assert manifest["seed"] == 7
        again = tmp_path / "again"
        run("bench", "--config", "configs/smoke.toml", "--out", again)
        assert (again / "report.csv").read_bytes() == (out / "report.csv").read_bytes()


def test_help_lists_subcommands(capsys):
    with pytest.raises(SystemExit) as info:
        main(["--help"])
    assert info.value.code == 0
    text = capsys.readouterr().out
    for name in ("simulate", "estimate", "oracle", "bandwidth", "bench"):
        assert name in text

"""Print exact quantities of the built-in models on the query grid.

For each model and z: the rate, the reachability partition, the cure rate
of every state, the mean hitting step given a hit and the geometric decay
fit of the coefficient tail.
"""

import argparse

import numpy as np

from hitsurv.model import load_model
from hitsurv.oracle import geometric_decay_check, reachable_partition, true_coefficients, true_cure_rate


def summarise(name: str, zs, k: int) -> None:
    spec = load_model(name)
    print(f"== {spec.name} (terminal {sorted(spec.label_of(x) for x in spec.terminal_set)})")
    for z in zs:
        table = true_coefficients(spec, z, k)
        part = reachable_partition(spec, z)
        decay = geometric_decay_check(table)
        j = np.arange(k + 1)[:, None]
        hit = table.hit_mass()
        with np.errstate(invalid="ignore", divide="ignore"):
            mean_step = (j * table.values).sum(axis=0) / hit
        print(f"z={z:.2f} rate={float(spec.rate_fn(z)):.4f} r_hat={decay.r_hat:.4f} "
              f"isolated={sorted(spec.label_of(x) for x in part.isolated)}")
        for x in spec.non_terminal:
            cure = true_cure_rate(spec, z, x, k).value
            print(f"    state {spec.label_of(x)}: cure={cure:.4f} mean_step={mean_step[x]:.3f}")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--models", default="model-a,model-b")
    parser.add_argument("--z", default="0.2,0.4,0.6,0.8")
    parser.add_argument("--k", type=int, default=130)
    args = parser.parse_args()
    zs = [float(v) for v in args.z.split(",")]
    for name in args.models.split(","):
        summarise(name, zs, args.k)


if __name__ == "__main__":
    main()

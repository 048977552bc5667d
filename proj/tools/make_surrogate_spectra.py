"""Writes the bundled surrogate eigenvalue lists used by quadratic Cases 1 and 2.

Case 1: four heavy-tailed lists on disjoint ranges. Case 2: four lists with one shared
heavy-tailed shape and small independent perturbations.
"""
import pathlib

import numpy as np

OUT = pathlib.Path(__file__).resolve().parent.parent / "data" / "spectra"
N = 200


def heavy_tail(rng, lo, hi, n):
    # Most mass near lo, a thin tail up to hi.
    u = np.sort(rng.random(n))
    return lo * (hi / lo) ** (u**3)


def write(name, values):
    values = np.sort(values)[::-1]
    text = "eigenvalue\n" + "".join(f"{v!r}\n" for v in values.tolist())
    (OUT / name).write_text(text)


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(20240501)
    ranges = [(1.0, 8.0), (20.0, 150.0), (300.0, 900.0), (1500.0, 5000.0)]
    for l, (lo, hi) in enumerate(ranges, start=1):
        write(f"case1_block{l}.csv", heavy_tail(rng, lo, hi, N))
    shape = heavy_tail(rng, 1.0, 5000.0, N)
    for l in range(1, 5):
        write(f"case2_block{l}.csv", shape * np.exp(0.02 * rng.standard_normal(N)))


if __name__ == "__main__":
    main()

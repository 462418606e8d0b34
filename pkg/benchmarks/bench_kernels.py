"""Time the compiled kernels against the numpy fallback.

Usage: ``python3 benchmarks/bench_kernels.py [--rows N] [--cols P] [--repeat K]``
"""

import argparse
import timeit

import numpy as np

from dr_glm import _kernels


def make_inputs(n, p, seed=0):
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.ones(n), rng.normal(size=(n, p - 1))])
    beta = rng.normal(scale=0.2, size=p)
    y_bin = (rng.random(n) < 0.5).astype(float)
    y_pois = rng.poisson(1.5, size=n).astype(float)
    y_mult = rng.integers(1, 5, size=n).astype(float)
    beta_mult = rng.normal(scale=0.2, size=3 * p)
    return X, beta, y_bin, y_pois, y_mult, beta_mult


def cases(X, beta, y_bin, y_pois, y_mult, beta_mult):
    return {
        "gram": lambda m: m.gram(X, y_pois),
        "binomial terms": lambda m: m.glm_terms(_kernels.BINOMIAL, X, y_bin, beta, 2),
        "poisson terms": lambda m: m.glm_terms(_kernels.POISSON, X, y_pois, beta, 2),
        "multinomial terms": lambda m: m.glm_terms(_kernels.MULTINOMIAL, X, y_mult,
                                                   beta_mult, 4),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, default=200_000)
    ap.add_argument("--cols", type=int, default=8)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    backends = _kernels.available_backends()
    if "cython" not in backends:
        print("compiled extension not built; only the python backend is available")
    inputs = make_inputs(args.rows, args.cols)
    names = list(backends)
    print(f"rows={args.rows} cols={args.cols} best of {args.repeat}")
    print(f"{'kernel':<20}" + "".join(f"{n:>12}" for n in names)
          + ("     speedup" if len(names) == 2 else ""))
    for label, fn in cases(*inputs).items():
        best = [min(timeit.repeat(lambda m=backends[n]: fn(m), number=1, repeat=args.repeat))
                for n in names]
        line = f"{label:<20}" + "".join(f"{t * 1e3:>10.2f}ms" for t in best)
        if len(best) == 2:
            line += f"{best[0] / best[1]:>11.2f}x"
        print(line)


if __name__ == "__main__":
    main()

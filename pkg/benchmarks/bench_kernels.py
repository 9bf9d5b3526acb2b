"""Time the compiled and numpy kernel backends on the same inputs.

    python benchmarks/bench_kernels.py [--n 20000] [--rows 200] [--bits 10] [--dim 16]

Each kernel is timed in isolation, then sketch insert/query end to end with
each backend swapped in. Outputs of the two backends are checked for
equality before timing.
"""
import argparse
import time

import numpy as np

from nwsketch import _backend, lsh, race
from nwsketch.lsh import HashBank, LshFamilySpec
from nwsketch.nws import NwSketch


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def use_backend(mod):
    lsh.kernels = mod
    race.kernels = mod


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--n", type=int, default=20000, help="points per batch")
    ap.add_argument("--rows", type=int, default=200)
    ap.add_argument("--bits", type=int, default=10)
    ap.add_argument("--dim", type=int, default=16)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    backends = _backend.available_backends()
    if len(backends) < 2:
        print("compiled extension not built; only the numpy backend is available")

    rng = np.random.default_rng(0)
    X = rng.standard_normal((args.n, args.dim))
    y = rng.uniform(-1, 1, args.n)
    spec = LshFamilySpec(bits=args.bits, dim=args.dim, seed=1)
    bank = HashBank.from_spec(spec, args.rows)
    P = np.ascontiguousarray(np.concatenate([h.projections for h in bank.hashers]))
    width = 1 << args.bits

    ref_codes = None
    results = {}
    for name, mod in sorted(backends.items()):
        codes = mod.srp_codes(X, P, args.rows, args.bits)
        if ref_codes is None:
            ref_codes = codes
        elif not np.array_equal(codes, ref_codes):
            raise SystemExit(f"{name} codes differ from the reference backend")
        cells = np.zeros((args.rows, width))
        use_backend(mod)
        sk = NwSketch(spec, args.rows, 1.0, bank=bank)
        results[name] = {
            "srp_codes": best_of(lambda: mod.srp_codes(X, P, args.rows, args.bits), args.repeat),
            "scatter_add": best_of(lambda: mod.scatter_add(cells, ref_codes, y), args.repeat),
            "gather": best_of(lambda: mod.gather(cells, ref_codes), args.repeat),
            "nws insert": best_of(lambda: sk.insert_many(X, y), args.repeat),
            "nws query": best_of(lambda: sk.query_many(X), args.repeat),
        }
    use_backend(_backend.kernels)

    names = sorted(results)
    print(f"n={args.n} rows={args.rows} bits={args.bits} dim={args.dim} (best of {args.repeat}, seconds)")
    print(f"{'kernel':<12}" + "".join(f"{n:>12}" for n in names) + ("     speedup" if len(names) == 2 else ""))
    for kernel in results[names[0]]:
        line = f"{kernel:<12}" + "".join(f"{results[n][kernel]:>12.4f}" for n in names)
        if len(names) == 2:
            line += f"{results['python'][kernel] / results['cython'][kernel]:>11.2f}x"
        print(line)


if __name__ == "__main__":
    main()

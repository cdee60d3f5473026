"""Timing harness: convolutional vs brute-force cosine matching on one query map.

    python3 scripts/bench_match.py [--refs 50] [--size 64] [--channels 32] [--k 3]
"""

import argparse
import time

import numpy as np

from semicycle.psf import extract_patches, match_bruteforce, match_conv, store_from_maps


def bench(refs: int, size: int, channels: int, k: int, seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    maps = rng.standard_normal((refs, channels, size, size)).astype(np.float32)
    store = store_from_maps({3: maps}, {3: maps}, k, bytes(32), level5=maps[:, :1])
    query = rng.standard_normal((channels, size, size))
    t0 = time.perf_counter()
    conv = match_conv(query, store, 3)
    t_conv = time.perf_counter() - t0
    t0 = time.perf_counter()
    brute = match_bruteforce(extract_patches(query, k, 3), store, 3)
    t_brute = time.perf_counter() - t0
    same = bool(np.array_equal(conv.pairs(), brute.pairs()))
    return {"conv_s": t_conv, "brute_s": t_brute, "ratio": t_brute / t_conv, "identical": same}


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--refs", type=int, default=50)
    ap.add_argument("--size", type=int, default=64, help="level-3 map height and width")
    ap.add_argument("--channels", type=int, default=32)
    ap.add_argument("--k", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    a = ap.parse_args()
    r = bench(a.refs, a.size, a.channels, a.k, a.seed)
    print(f"refs={a.refs} map={a.channels}x{a.size}x{a.size} k={a.k}")
    print(f"match_conv       {r['conv_s']:.2f}s")
    print(f"match_bruteforce {r['brute_s']:.2f}s")
    print(f"speedup          {r['ratio']:.1f}x  (identical matches: {r['identical']})")


if __name__ == "__main__":
    main()

"""Compare the compiled and numpy kernel backends and the two velocity modes.

Run with ``python3 benchmarks/bench_rhs.py [--repeats R] [--max-log2 K]``.
Timings are the minimum over repeats, which filters out scheduler and
page-fault noise better than the mean.
"""

from __future__ import annotations

import argparse
import time
from typing import Callable

import numpy as np

from morseflow import _backend
from morseflow.dynamics import velocity_fast, velocity_naive
from morseflow.state import SystemState


def best_of(fn: Callable[[], object], repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def random_state(N: int, rng: np.random.Generator) -> SystemState:
    x = np.sort(rng.uniform(-3.0, 3.0, N + 1))
    y = np.sort(rng.uniform(-3.0, 3.0, N + 1))
    return SystemState.from_positions(x, y)


def bench_backends(sizes: list[int], repeats: int) -> None:
    mods = _backend.available_backends()
    print(f"{'kernel':<18}{'N':>8}" + "".join(f"{name:>14}" for name in mods) + f"{'speedup':>10}")
    rng = np.random.default_rng(1)
    for N in sizes:
        a = np.sort(rng.uniform(-3, 3, N + 1))
        h = np.full(N, 1.0 / N) / np.diff(a)
        pts = np.sort(rng.uniform(-3, 3, N + 1))
        m = np.full(N, 1.0 / N)
        cases = {
            "mean_slope_sums": lambda k: k.mean_slope_sums(a, m, pts),
            "exp_conv": lambda k: k.exp_conv(a, m, pts),
            "direct_conv": lambda k: k.direct_conv(a, h, pts),
            "direct_conv_prime": lambda k: k.direct_conv_prime(a, h, pts),
        }
        for name, call in cases.items():
            # quadratic kernels get fewer repeats at large N
            reps = repeats if name == "exp_conv" or N <= 2048 else max(1, repeats // 5)
            t = {b: best_of(lambda k=k: call(k), reps) for b, k in mods.items()}
            ratio = t["python"] / t["cython"] if "cython" in t else float("nan")
            print(
                f"{name:<18}{N:>8}"
                + "".join(f"{t[b] * 1e3:>12.3f}ms" for b in mods)
                + f"{ratio:>9.1f}x"
            )


def bench_modes(sizes: list[int], repeats: int, naive_limit: int) -> None:
    print(f"\n{'N':>8}{'fast':>14}{'ratio':>8}{'naive':>14}{'ratio':>8}   backend={_backend.BACKEND}")
    rng = np.random.default_rng(2)
    prev: tuple[float, float] | None = None
    for N in sizes:
        s = random_state(N, rng)
        tf = best_of(lambda: velocity_fast(s), repeats)
        tn = best_of(lambda: velocity_naive(s), max(1, repeats // 10)) if N <= naive_limit else float("nan")
        rf = tf / prev[0] if prev else float("nan")
        rn = tn / prev[1] if prev else float("nan")
        print(f"{N:>8}{tf * 1e3:>12.3f}ms{rf:>8.2f}{tn * 1e3:>12.3f}ms{rn:>8.2f}")
        prev = (tf, tn)
    s = random_state(100_000, rng)
    print(f"\nfast mode, N=100000: {best_of(lambda: velocity_fast(s), 5) * 1e3:.1f} ms per RHS")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=30)
    ap.add_argument("--max-log2", type=int, default=14)
    args = ap.parse_args()
    sizes = [2**k for k in range(9, args.max_log2 + 1)]
    bench_backends([n for n in sizes if n <= 4096], args.repeats)
    bench_modes(sizes, args.repeats, naive_limit=2**14)


if __name__ == "__main__":
    main()

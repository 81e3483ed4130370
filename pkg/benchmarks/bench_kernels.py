"""Time the numba kernels against their pure-numpy counterparts.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Both forms are called directly, so the THERMOFORGE_DISABLE_NUMBA flag does
not matter here. The first numba call (compilation or cache load) is timed
separately and excluded from the steady-state numbers.
"""
from __future__ import annotations

import argparse
import json
import platform
import time

import numpy as np

from thermoforge import kernels


def zone_inputs(rng: np.random.Generator, n: int, horizon: int) -> tuple:
    """Plausible plant and schedule arrays for ``n`` episodes."""
    per_ep = [rng.uniform(15, 25, n), rng.uniform(50, 200, n), rng.uniform(1, 5, n), rng.uniform(0.5, 2, n),
              rng.uniform(1, 20, n), rng.uniform(100, 400, n), rng.uniform(100, 600, n),
              rng.uniform(10, 100, n), rng.uniform(10, 100, n), rng.uniform(10, 100, n),
              rng.uniform(0, 0.3, n), rng.uniform(0, 0.3, n)]
    hour = np.arange(horizon) % 24
    occupied = np.tile(((hour >= 8) & (hour < 18)).astype(float), (n, 1))
    heat = np.where(occupied > 0, 22.0, 18.0)
    cool = np.where(occupied > 0, 24.0, 28.0)
    vent = occupied * rng.uniform(0.5, 3, (n, 1))
    t_amb = 18 + 8 * np.sin(2 * np.pi * (hour - 9) / 24) + rng.normal(0, 1, (n, horizon))
    iglob = np.clip(600 * np.sin(np.pi * (hour - 6) / 12), 0, None) * np.ones((n, 1))
    return (*per_ep, occupied, heat, cool, vent, np.full((n, horizon), 20.0), t_amb, iglob, 400.0)


def best_of(fn, args, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


def first_call(fn, args) -> float:
    t0 = time.perf_counter()
    fn(*args)
    return time.perf_counter() - t0


def run(repeat: int, zone_sizes, sort_sizes, seed: int = 0) -> list[dict]:
    rng = np.random.default_rng(seed)
    rows = []
    warm = first_call(kernels.simulate_zone_numba, zone_inputs(rng, 2, 24))
    for n, horizon in zone_sizes:
        args = zone_inputs(rng, n, horizon)
        a, _ = kernels.simulate_zone_numba(*args)
        b, _ = kernels.simulate_zone_numpy(*args)
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-9)
        rows.append({"kernel": "simulate_zone", "size": f"{n}x{horizon}", "first_call_s": warm,
                     "numba_s": best_of(kernels.simulate_zone_numba, args, repeat),
                     "numpy_s": best_of(kernels.simulate_zone_numpy, args, repeat)})
    warm = first_call(kernels.domination_ranks_numba, (rng.random((4, 2)),))
    for n in sort_sizes:
        args = (rng.random((n, 2)),)
        assert np.array_equal(kernels.domination_ranks_numba(*args), kernels.domination_ranks_numpy(*args))
        rows.append({"kernel": "domination_ranks", "size": str(n), "first_call_s": warm,
                     "numba_s": best_of(kernels.domination_ranks_numba, args, repeat),
                     "numpy_s": best_of(kernels.domination_ranks_numpy, args, repeat)})
    for r in rows:
        r["speedup"] = r["numpy_s"] / r["numba_s"]
    return rows


def format_table(rows: list[dict]) -> str:
    lines = [f"{'kernel':<18}{'size':>10}{'numba ms':>12}{'numpy ms':>12}{'speedup':>10}"]
    for r in rows:
        lines.append(f"{r['kernel']:<18}{r['size']:>10}{1e3 * r['numba_s']:>12.3f}"
                     f"{1e3 * r['numpy_s']:>12.3f}{r['speedup']:>10.1f}")
    return "\n".join(lines)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--json", default=None, help="also write the rows to this file")
    parser.add_argument("--quick", action="store_true", help="small sizes only (smoke test)")
    args = parser.parse_args(argv)
    if args.quick:
        zone_sizes, sort_sizes = [(4, 48)], [32]
    else:
        zone_sizes = [(1, 336), (64, 336), (512, 336), (2000, 336)]
        sort_sizes = [64, 128, 256, 512]
    rows = run(args.repeat, zone_sizes, sort_sizes)
    print(f"python {platform.python_version()}  numpy {np.__version__}  repeat {args.repeat}")
    print(format_table(rows))
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=1)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

#!/usr/bin/env python3
"""Compare the compiled bit-serial kernel against the numpy fallback.

Runs the same crossbar matmuls through both implementations, checks the
outputs are bit-identical, and reports wall-clock plus effective MAC rate.

    python3 benchmarks/bench_kernels.py
    python3 benchmarks/bench_kernels.py --sizes 64x64 256x256 --vectors 128
"""

import argparse
import sys
import time

import numpy as np

import xbarsim._kernels as kernels
from xbarsim._kernels import fallback
from xbarsim.cimkernel import cim_matmul
from xbarsim.config import config_from_dict


def build_cfg(design: str, rows: int) -> object:
    return config_from_dict({
        "quant": {"weight_bits": 8, "input_bits": 8},
        "mapping": {"design": design, "cell_bits": 4,
                    "input_sign_mode": "twos-complement"},
        "device": "ideal",
        "adc": {"kind": "linear", "precision": 13, "lo": -4096.0, "hi": 4095.0},
        "arch": {"subarray_rows": rows, "subarray_cols": rows, "adc_share": 8},
    })


def run_case(impl, cfg, W, X, repeats: int):
    kernels.run_slot = impl.run_slot
    best = float("inf")
    out = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out, _ = cim_matmul(X, W, cfg, input_mode="twos-complement")
        best = min(best, time.perf_counter() - t0)
    return out, best


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", nargs="+", default=["64x64", "128x128", "256x256"],
                    help="RxC weight shapes")
    ap.add_argument("--vectors", type=int, default=64)
    ap.add_argument("--designs", nargs="+",
                    default=["Design1", "Design2", "Design3"])
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    try:
        from xbarsim._kernels import _core
    except ImportError:
        print("compiled kernel not built (install with Cython + a C compiler); "
              "nothing to compare", file=sys.stderr)
        return 1

    saved = kernels.run_slot
    rng = np.random.default_rng(args.seed)
    rows = 128
    print(f"{'case':<24}{'python':>12}{'compiled':>12}{'speedup':>9}"
          f"{'cMAC/s':>10}")
    try:
        for size in args.sizes:
            R, C = (int(t) for t in size.lower().split("x"))
            W = rng.integers(-127, 128, size=(R, C)).astype(np.int32)
            X = rng.integers(-128, 128, size=(args.vectors, R)).astype(np.int32)
            for design in args.designs:
                cfg = build_cfg(design, rows)
                y_py, t_py = run_case(fallback, cfg, W, X, args.repeats)
                y_c, t_c = run_case(_core, cfg, W, X, args.repeats)
                if not np.array_equal(y_py, y_c):
                    print(f"MISMATCH for {design} {size}", file=sys.stderr)
                    return 2
                macs = R * C * args.vectors
                print(f"{design + ' ' + size:<24}{t_py * 1e3:>10.1f}ms"
                      f"{t_c * 1e3:>10.1f}ms{t_py / t_c:>8.1f}x"
                      f"{macs / t_c / 1e6:>9.1f}M")
    finally:
        kernels.run_slot = saved
    print("\noutputs bit-identical across backends")
    return 0


if __name__ == "__main__":
    sys.exit(main())

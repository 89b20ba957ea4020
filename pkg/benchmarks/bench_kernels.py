"""Compare the compiled kernels against the pure-Python fallback.

    python benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Runs the lattice forward-backward recursion and the edit-distance DP on a few
sizes, checks both backends agree, and prints median wall time per call.
"""
from __future__ import annotations

import argparse
import json
import statistics
import sys
import time

import numpy as np

from upl_lab import _kernels_py

try:
    from upl_lab import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

LATTICE_SIZES = [(50, 10), (150, 30), (400, 60)]
EDIT_SIZES = [20, 100, 400]


def _time(fn, repeat: int) -> float:
    runs = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        runs.append(time.perf_counter() - t)
    return statistics.median(runs)


def _lattice(T: int, U: int, rng) -> tuple[np.ndarray, np.ndarray]:
    blank = np.ascontiguousarray(np.log(rng.uniform(0.05, 0.95, (T, U + 1))))
    label = np.ascontiguousarray(np.log(rng.uniform(0.05, 0.95, (T, U))))
    return blank, label


def run(repeat: int) -> list[dict]:
    rng = np.random.default_rng(0)
    rows = []
    backends = [("python", _kernels_py)] + ([("cython", _compiled)] if _compiled is not None else [])
    for T, U in LATTICE_SIZES:
        blank, label = _lattice(T, U, rng)
        lls = {}
        row = {"kernel": "forward_backward", "size": f"T={T} U={U}"}
        for name, mod in backends:
            lls[name] = mod.forward_backward(blank, label)[2]
            row[f"{name}_s"] = _time(lambda: mod.forward_backward(blank, label), repeat)
        if len(lls) == 2 and abs(lls["python"] - lls["cython"]) > 1e-9 * max(1.0, abs(lls["python"])):
            raise SystemExit(f"backends disagree at T={T} U={U}: {lls}")
        rows.append(row)
    for n in EDIT_SIZES:
        ref = rng.integers(1, 6, n).astype(np.int64)
        hyp = rng.integers(1, 6, n + n // 5).astype(np.int64)
        outs = {}
        row = {"kernel": "edit_distance", "size": f"n={n}"}
        for name, mod in backends:
            outs[name] = tuple(mod.edit_distance(ref, hyp))
            row[f"{name}_s"] = _time(lambda: mod.edit_distance(ref, hyp), repeat)
        if len(set(outs.values())) > 1:
            raise SystemExit(f"backends disagree at n={n}: {outs}")
        rows.append(row)
    for row in rows:
        if "cython_s" in row:
            row["speedup"] = row["python_s"] / row["cython_s"]
    return rows


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="also write the rows to this file")
    args = ap.parse_args(argv)
    if _compiled is None:
        print("compiled extension not available; timing the Python fallback only", file=sys.stderr)
    rows = run(args.repeat)
    print(f"{'kernel':<18}{'size':<14}{'python ms':>12}{'cython ms':>12}{'speedup':>10}")
    for r in rows:
        cy = f"{r['cython_s'] * 1e3:12.3f}" if "cython_s" in r else f"{'-':>12}"
        sp = f"{r['speedup']:9.1f}x" if "speedup" in r else f"{'-':>10}"
        print(f"{r['kernel']:<18}{r['size']:<14}{r['python_s'] * 1e3:12.3f}{cy}{sp}")
    if args.json:
        with open(args.json, "w") as f:
            json.dump(rows, f, indent=1)
    return 0


if __name__ == "__main__":
    sys.exit(main())

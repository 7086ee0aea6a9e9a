"""Compare the numba kernels with the pure-numpy fallback.

Each backend runs in its own interpreter because ``MIGDYN_DISABLE_NUMBA`` is
read at import time.  Workloads are integrated once to warm up (compilation,
caches) and then timed over ``--repeat`` runs; the best time is reported.

    python3 benchmarks/bench_kernels.py --repeat 3
"""

import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, time
import numpy as np
from migdyn import backend_name
from migdyn.experiments import get
from migdyn.experiments.runner import build_spec
from migdyn.integrator import integrate

workloads = json.loads(sys.argv[1])
repeat = int(sys.argv[2])
out = {"backend": backend_name(), "results": {}}
for name, horizon in workloads:
    spec = build_spec(get(name)).with_(horizon=horizon)
    integrate(spec)
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        traj = integrate(spec)
        best = min(best, time.perf_counter() - t0)
    out["results"][name] = {"seconds": best, "steps": int(traj.stats["accepted"]),
                            "x_T": traj.x[-1].tolist()}
print(json.dumps(out))
"""

WORKLOADS = [
    ("tikhonov-selection", 2000.0),
    ("coupled-oscillators", 2000.0),
    ("neumann-waves-1d", 20.0),
]


def run_backend(disable, repeat):
    env = dict(os.environ)
    if disable:
        env["MIGDYN_DISABLE_NUMBA"] = "1"
    else:
        env.pop("MIGDYN_DISABLE_NUMBA", None)
    proc = subprocess.run([sys.executable, "-c", WORKER, json.dumps(WORKLOADS), str(repeat)],
                          env=env, capture_output=True, text=True, check=True)
    return json.loads(proc.stdout.strip().splitlines()[-1])


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args(argv)

    fast = run_backend(False, args.repeat)
    slow = run_backend(True, args.repeat)
    print(f"{'workload':<22}{'steps':>9}{fast['backend']:>11}{slow['backend']:>11}"
          f"{'speedup':>9}{'max |dx|':>11}")
    for name, _ in WORKLOADS:
        a, b = fast["results"][name], slow["results"][name]
        dx = max(abs(p - q) for p, q in zip(a["x_T"], b["x_T"]))
        print(f"{name:<22}{a['steps']:>9}{a['seconds']:>10.3f}s{b['seconds']:>10.3f}s"
              f"{b['seconds'] / a['seconds']:>8.1f}x{dx:>11.1e}")


if __name__ == "__main__":
    main()

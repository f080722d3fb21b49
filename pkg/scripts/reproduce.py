#!/usr/bin/env python3
"""Run the canonical desk-scale experiments, skipping finished ones.

Usage: python3 scripts/reproduce.py [NAME ...]
With no names, runs every registered experiment in order.  Results land in
runs/<name>/ and are reused by the slow acceptance tests.
"""

import os
import sys
import time

for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(var, "1")

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from bcn.experiments import EXPERIMENTS, ensure, is_complete  # noqa: E402


def main():
    names = sys.argv[1:] or list(EXPERIMENTS)
    for name in names:
        if name not in EXPERIMENTS:
            sys.exit(f"unknown experiment {name!r}; known: {', '.join(EXPERIMENTS)}")
    for name in names:
        if is_complete(name):
            print(f"[{name}] already complete, skipping", flush=True)
            continue
        print(f"[{name}] starting at {time.strftime('%H:%M:%S')}", flush=True)
        t0 = time.time()
        history, run_dir = ensure(name, log_every=500)
        last = history[-1]
        print(
            f"[{name}] done in {(time.time() - t0) / 3600:.2f} h: "
            f"epoch {last.epoch} test_acc {last.test_acc:.4f} "
            f"rel {last.rel_acc:.4f} nonrel {last.nonrel_acc:.4f} loc {last.loc_err:.4f}",
            flush=True,
        )


if __name__ == "__main__":
    main()

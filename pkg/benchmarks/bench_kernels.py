#!/usr/bin/env python
"""Time the numba and numpy paths of every kernel, plus one short SynCheck run
under each path (a fresh interpreter per path, toggled by SYNLAB_DISABLE_NUMBA).

    python benchmarks/bench_kernels.py [--repeat 5] [--json out.json] [--skip-e2e]

JIT compile time is excluded (one warm-up call); the end-to-end numbers
include it only if the on-disk numba cache is cold.  MLP matmuls go through
numpy/BLAS on both paths, so the end-to-end gap is small by construction.
"""

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from synlab import _kernels as K

E2E = """
import time
from synlab.experiment import TestbedConfig, build_data, model_config_for
from synlab.syncheck import train_syncheck
from synlab.training import TrainConfig
from synlab import _kernels
tb = TestbedConfig.preset("in_domain", n_real=1000, n_test=500)
data = build_data(tb, 0)
mc = model_config_for(tb, (64,), 0, data.real_train)
tc = TrainConfig(epochs_total=10, lr_decay_interval=4)
train_syncheck(data.real_train, data.synthetic, mc, TrainConfig(epochs_total=2))  # warm-up
t = time.perf_counter()
train_syncheck(data.real_train, data.synthetic, mc, tc)
print(_kernels.USE_NUMBA, time.perf_counter() - t)
"""


def cases(rng):
    n, c = 20000, 6
    logits = rng.standard_normal((n, c))
    probs = np.exp(logits) / np.exp(logits).sum(1, keepdims=True)
    labels = rng.integers(c, size=n)
    q = rng.random((n, c, 2)) + 1e-3
    q /= q.sum(-1, keepdims=True)
    lq = np.log(q)
    syn_x, real_x = rng.standard_normal((2000, 16)), rng.standard_normal((2000, 16))
    syn_c, real_c = rng.integers(c, size=2000), rng.integers(c, size=2000)
    cost = rng.random((10, 3))
    vals = rng.uniform(-1, 1, size=200000)
    edges = np.linspace(-1, 1, 65)
    return {
        "histogram_counts (2e5 values)": ("histogram_counts", (vals, edges)),
        "margins (2e4 x 6)": ("margins", (probs, labels)),
        "ova_terms (2e4 x 6)": ("ova_terms", (np.ascontiguousarray(lq[..., 0]),
                                              np.ascontiguousarray(lq[..., 1]), labels)),
        "max_cosine_same_class (2e3 x 2e3)": ("max_cosine_same_class",
                                              (syn_x, syn_c, real_x, real_c)),
        "enumerate_classifier_losses (3^10)": ("enumerate_classifier_losses", (cost,)),
    }


def bench(fn, args, repeat):
    fn(*args)  # warm-up / compile
    t = timeit.repeat(lambda: fn(*args), number=1, repeat=repeat)
    return min(t)


def e2e(disable):
    env = dict(os.environ, SYNLAB_DISABLE_NUMBA="1" if disable else "0")
    out = subprocess.run([sys.executable, "-c", E2E], env=env, capture_output=True,
                         text=True, check=True).stdout.split()
    return out[0] == "True", float(out[1])


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="write results here")
    ap.add_argument("--skip-e2e", action="store_true")
    args = ap.parse_args()

    if not K.HAVE_NUMBA:
        print("numba not importable; the jit column runs the same code uncompiled")
    rng = np.random.default_rng(0)
    rows = []
    print(f"{'kernel':40s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for label, (name, a) in cases(rng).items():
        t_np = bench(getattr(K, name + "_numpy"), a, args.repeat)
        t_jit = bench(getattr(K, name + "_jit"), a, args.repeat)
        rows.append({"kernel": label, "numpy_s": t_np, "numba_s": t_jit})
        print(f"{label:40s} {1e3 * t_np:10.2f} {1e3 * t_jit:10.2f} {t_np / t_jit:8.1f}x")

    result = {"kernels": rows, "have_numba": K.HAVE_NUMBA}
    if not args.skip_e2e:
        used_np, t_np = e2e(True)
        used_jit, t_jit = e2e(False)
        result["syncheck_10_epochs"] = {"numpy_s": t_np, "numba_s": t_jit}
        print(f"{'train_syncheck, 10 epochs (s)':40s} {t_np:10.2f} {t_jit:10.2f} "
              f"{t_np / t_jit:8.2f}x   (numba used: {used_jit}, numpy run used numba: {used_np})")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(result, fh, indent=2)


if __name__ == "__main__":
    main()

"""Compare the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]

Each backend runs in its own interpreter because the choice is made at
import time (``OCRM_PURE_PYTHON``).
"""
import argparse
import json
import os
import subprocess
import sys
import timeit

CHILD = r"""
import json, sys, timeit
import numpy as np
from ocrm import kernels, pipeline, svdd

repeat = int(sys.argv[1])
rng = np.random.default_rng(0)
out = {"backend": kernels.BACKEND}


def best(fn, number):
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


# first encoder layer on a batch of 64: 7x7 stride 2 over a padded 38x38 input
xp = rng.standard_normal((64, 1, 38, 38)).astype(np.float32)
cols = np.empty((64 * 16 * 16, 49), np.float32)
out["im2col 7x7 [64,1,32,32]"] = best(lambda: kernels.im2col(xp, 7, 7, 2, 16, 16, cols), 20)

# 3x3 stride 2 layer with 64 channels
xp3 = rng.standard_normal((64, 64, 18, 18)).astype(np.float32)
cols3 = np.empty((64 * 8 * 8, 64 * 9), np.float32)
out["im2col 3x3 [64,64,16,16]"] = best(lambda: kernels.im2col(xp3, 3, 3, 2, 8, 8, cols3), 20)
canvas = np.zeros_like(xp3)
out["col2im 3x3 [64,64,16,16]"] = best(lambda: kernels.col2im(cols3, 3, 3, 2, 8, 8, canvas), 20)

# SVDD dual on 2000 augmented features of dimension 512
feats = rng.standard_normal((2000, 512))
K = svdd.gram(feats, svdd.KernelSpec())
out["SMO n=2000"] = best(lambda: svdd.solve_dual(K, 0.1), 1)

# one full-arm training step, batch 64
cfg = pipeline.TrainConfig(arm="full", seed=0)
nets = pipeline.build_networks(cfg)
opts = pipeline.make_optimizers(nets, cfg)
batch = rng.random((64, 1, 32, 32)).astype(np.float32)
prng = np.random.default_rng(1)
out["train step (full arm, batch 64)"] = best(lambda: pipeline.train_step(batch, nets, opts, cfg, prng), 3)
print(json.dumps(out))
"""


def run(pure, repeat):
    env = dict(os.environ, OCRM_PURE_PYTHON="1" if pure else "0")
    res = subprocess.run([sys.executable, "-c", CHILD, str(repeat)], env=env, capture_output=True, text=True, check=True)
    return json.loads(res.stdout)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    compiled = run(False, args.repeat)
    fallback = run(True, args.repeat)
    if compiled["backend"] != "cython":
        print("compiled extension not available; both columns use the numpy fallback")
    print(f"{'kernel':36s} {'compiled ms':>12s} {'numpy ms':>12s} {'speed-up':>9s}")
    for key in compiled:
        if key == "backend":
            continue
        a, b = compiled[key] * 1e3, fallback[key] * 1e3
        print(f"{key:36s} {a:12.3f} {b:12.3f} {b / a:8.2f}x")


if __name__ == "__main__":
    main()

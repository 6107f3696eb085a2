"""Time one Adam epoch (batch size 1) with the compiled and pure-Python kernels.

    python3 benchmarks/bench_kernels.py --samples 924 --dim 16 --repeat 5
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from balens import kernels
from balens.classifier import ADAM_BETA1, ADAM_BETA2, ADAM_EPS, ClassifierSpec, init_params


def time_epoch(backend: str, spec: ClassifierSpec, X, y, repeat: int) -> tuple[float, np.ndarray]:
    kern = kernels.get(backend)
    rng = np.random.default_rng(0)
    theta0 = init_params(spec, rng)
    order = rng.permutation(len(X)).astype(np.int64)
    best = np.inf
    for _ in range(repeat):
        theta = theta0.copy()
        m = np.zeros_like(theta)
        v = np.zeros_like(theta)
        t0 = time.perf_counter()
        if spec.kind == "logistic":
            kern.adam_epoch_logistic(theta, m, v, 0, X, y, order, 1e-4, 1, ADAM_BETA1, ADAM_BETA2, ADAM_EPS)
        else:
            kern.adam_epoch_mlp(theta, m, v, 0, X, y, order, 1e-4, 1, spec.hidden_units,
                                ADAM_BETA1, ADAM_BETA2, ADAM_EPS)
        best = min(best, time.perf_counter() - t0)
    return best, theta


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--samples", type=int, default=924)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args(argv)

    rng = np.random.default_rng(1)
    X = rng.normal(size=(args.samples, args.dim))
    y = rng.integers(0, 2, args.samples).astype(np.float64)
    backends = ["python"] + (["cython"] if kernels.compiled_available() else [])
    print(f"samples={args.samples} dim={args.dim} hidden={args.hidden} (best of {args.repeat})")
    for kind in ("mlp_head", "logistic"):
        spec = ClassifierSpec(args.dim, kind, args.hidden)
        results = {b: time_epoch(b, spec, X, y, args.repeat) for b in backends}
        line = "  ".join(f"{b}={1e3 * t:8.2f} ms" for b, (t, _) in results.items())
        if len(results) == 2:
            speedup = results["python"][0] / results["cython"][0]
            diff = float(np.max(np.abs(results["python"][1] - results["cython"][1])))
            line += f"  speedup={speedup:6.1f}x  max|dtheta|={diff:.1e}"
        print(f"{kind:9s} {line}")
    if len(backends) == 1:
        print("compiled kernels unavailable; only the fallback was timed")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

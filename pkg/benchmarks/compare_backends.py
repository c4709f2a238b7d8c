"""Compiled vs numpy scan kernels: per-kernel timings and an end-to-end
Mamba-1 train step under each backend.

    python3 benchmarks/compare_backends.py [--batch 8] [--length 1601] [--runs 3]

The end-to-end rows run in a subprocess per backend because the backend is
picked once at import (BURSTMAMBA_PURE_PYTHON=1 forces the fallback).
"""

import argparse
import json
import os
import subprocess
import sys

from burstmamba import kernels
from burstmamba.bench import kernel_benchmark

E2E = """
import json, sys
from burstmamba import kernels
from burstmamba.bench import benchmark
from burstmamba.model import ModelConfig
cfg = ModelConfig(backbone="mamba1", num_classes=4, seq_len={seq_len})
r = benchmark(cfg, batches=({batch},), runs={runs}, warmup=1, measure_memory=False)[0]
print(json.dumps([kernels.BACKEND, r.fwd_ms, r.bwd_ms, r.eval_ms]))
"""


def end_to_end(backend, batch, seq_len, runs):
    env = dict(os.environ)
    env.pop("BURSTMAMBA_PURE_PYTHON", None)
    if backend == "python":
        env["BURSTMAMBA_PURE_PYTHON"] = "1"
    code = E2E.format(batch=batch, seq_len=seq_len, runs=runs)
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, default=8)
    ap.add_argument("--length", type=int, default=1601)
    ap.add_argument("--channels", type=int, default=512)
    ap.add_argument("--d-state", type=int, default=16)
    ap.add_argument("--runs", type=int, default=3)
    ap.add_argument("--skip-model", action="store_true", help="kernel table only")
    args = ap.parse_args(argv)

    backends = kernels.available_backends()
    if "cython" not in backends:
        print("compiled kernels not built; only the numpy fallback is timed", file=sys.stderr)
    times, diffs = kernel_benchmark(args.batch, args.length, args.channels, args.d_state, args.runs)
    print("kernel,backend,seconds,speedup_vs_python")
    for (backend, kname), sec in sorted(times.items(), key=lambda kv: (kv[0][1], kv[0][0])):
        print(f"{kname},{backend},{sec:.4f},{times[('python', kname)] / sec:.2f}")
    for kname, d in diffs.items():
        print(f"# {kname} max |cython - python| = {d:.2e}")

    if not args.skip_model:
        print("model,backend,fwd_ms,bwd_ms,eval_ms")
        for backend in backends:
            name, fwd, bwd, ev = end_to_end(backend, args.batch, args.length - 1, args.runs)
            print(f"mamba1_default,{name},{fwd:.1f},{bwd:.1f},{ev:.1f}")


if __name__ == "__main__":
    main()

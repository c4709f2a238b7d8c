"""Timing harness: forward, backward and eval wall-times per batch size.

Each (config, batch) cell runs ``warmup`` untimed iterations and then
``runs`` timed ones per phase and reports arithmetic means. Peak transient
allocation is taken from one extra fwd+bwd pass traced with tracemalloc so
tracing overhead never leaks into the timings.
"""

import contextlib
import csv
import dataclasses
import gc
import io
import time
import tracemalloc
from dataclasses import dataclass

try:
    import resource
except ImportError:  # not available on Windows
    resource = None

import numpy as np

from . import kernels
from .core import ops
from .core.rng import STREAM_BENCH, STREAM_DROPOUT, make_rng
from .core.tensor import no_grad
from .model import ModelConfig, classify_forward, init_params

CSV_COLUMNS = ("label", "batch", "fwd_ms", "bwd_ms", "eval_ms", "peak_bytes", "runs", "warmup")
DEFAULT_BATCHES = (8, 16, 32, 64, 128, 256)
OOM = "OOM"

# overrides on top of a base ModelConfig, named like the published table rows
PRESETS = {
    "std_pos": {},
    "std_pos_mamba1": {"backbone": "mamba1"},
    "stride4": {"stride": 4},
    "stride4_mamba1": {"stride": 4, "backbone": "mamba1"},
    "no_emb_proj": {"emb_projection": False},
    "layers1": {"depth": 1},
    "layers4": {"depth": 4},
    "dstate32": {"d_state": 32},
    "dstate64": {"d_state": 64},
    "dstate128": {"d_state": 128},
}


def preset_config(name, base=None):
    if name not in PRESETS:
        raise KeyError(f"unknown bench preset {name!r}; choose from {sorted(PRESETS)}")
    base = base or ModelConfig()
    return dataclasses.replace(base, **PRESETS[name])


@dataclass
class BenchResult:
    label: str
    batch: int
    fwd_ms: float
    bwd_ms: float
    eval_ms: float
    peak_bytes: int
    runs: int
    warmup: int

    @property
    def oom(self):
        return self.fwd_ms is None

    def row(self):
        f = lambda v: OOM if v is None else f"{v:.3f}"
        return [self.label, self.batch, f(self.fwd_ms), f(self.bwd_ms), f(self.eval_ms),
                OOM if self.peak_bytes is None else self.peak_bytes, self.runs, self.warmup]


def _loss(x, y, params, config, rng):
    return ops.softmax_cross_entropy(classify_forward(x, params, config, training=True, rng=rng), y)[0]


def _time_cell(x, y, params, config, runs, warmup, seed):
    drop = make_rng(seed, STREAM_DROPOUT)

    def fwd():
        _loss(x, y, params, config, drop)

    def fwd_bwd():
        loss = _loss(x, y, params, config, drop)
        t = time.perf_counter()
        loss.backward()
        return time.perf_counter() - t

    def evaluate():
        with no_grad():
            classify_forward(x, params, config)

    for _ in range(warmup):
        fwd()
    ts = []
    for _ in range(runs):
        t = time.perf_counter()
        fwd()
        ts.append(time.perf_counter() - t)
    fwd_ms = 1e3 * float(np.mean(ts))

    for _ in range(warmup):
        fwd_bwd()
    bwd_ms = 1e3 * float(np.mean([fwd_bwd() for _ in range(runs)]))

    for _ in range(warmup):
        evaluate()
    ts = []
    for _ in range(runs):
        t = time.perf_counter()
        evaluate()
        ts.append(time.perf_counter() - t)
    eval_ms = 1e3 * float(np.mean(ts))
    return fwd_ms, bwd_ms, eval_ms


def _peak_bytes(x, y, params, config, seed):
    gc.collect()
    tracemalloc.start()
    try:
        _loss(x, y, params, config, make_rng(seed, STREAM_DROPOUT)).backward()
        _, peak = tracemalloc.get_traced_memory()
    finally:
        tracemalloc.stop()
    return int(peak)


def _proc_kib(path, key):
    with open(path) as fh:
        for line in fh:
            if line.startswith(key + ":"):
                return int(line.split()[1])
    raise KeyError(key)


@contextlib.contextmanager
def memory_guard(limit=None):
    """Cap the address space at current size + ``limit`` bytes (default: the
    kernel's MemAvailable) so an oversized cell raises MemoryError instead of
    being killed by the OOM killer. No-op where /proc or rlimits are missing."""
    try:
        vm = _proc_kib("/proc/self/status", "VmSize") * 1024
        if limit is None:
            limit = _proc_kib("/proc/meminfo", "MemAvailable") * 1024
        old = resource.getrlimit(resource.RLIMIT_AS)
    except (OSError, KeyError, AttributeError):
        yield
        return
    cap = vm + int(limit)
    if old[1] != resource.RLIM_INFINITY:
        cap = min(cap, old[1])
    resource.setrlimit(resource.RLIMIT_AS, (cap, old[1]))
    try:
        yield
    finally:
        resource.setrlimit(resource.RLIMIT_AS, old)


def benchmark(config, batches=DEFAULT_BATCHES, runs=10, warmup=10, label=None, seed=0,
              measure_memory=True, memory_limit=None, guard=True):
    """Rows for one config across ``batches``. ``bwd_ms`` is the backward
    pass alone, timed inside forward+backward iterations; ``eval_ms`` is a
    no-grad eval-mode forward. A MemoryError marks the cell OOM; with
    ``guard`` the address space is capped (see memory_guard) so that
    exhaustion surfaces as MemoryError."""
    if runs < 1 or warmup < 0:
        raise ValueError("need runs >= 1 and warmup >= 0")
    label = label or config.backbone
    params = init_params(config, seed)
    with memory_guard(memory_limit) if guard else contextlib.nullcontext():
        return _run_cells(config, params, batches, runs, warmup, label, seed, measure_memory)


def _run_cells(config, params, batches, runs, warmup, label, seed, measure_memory):
    rows = []
    for batch in batches:
        rng = make_rng(seed, STREAM_BENCH, int(batch))
        x = rng.integers(0, 256, size=(batch, config.seq_len), dtype=np.uint8)
        y = rng.integers(0, config.num_classes, size=batch)
        try:
            fwd_ms, bwd_ms, eval_ms = _time_cell(x, y, params, config, runs, warmup, seed)
            peak = _peak_bytes(x, y, params, config, seed) if measure_memory else 0
        except MemoryError:
            gc.collect()
            rows.append(BenchResult(label, int(batch), None, None, None, None, runs, warmup))
            continue
        finally:
            for p in params.values():
                p.grad = None
        rows.append(BenchResult(label, int(batch), fwd_ms, bwd_ms, eval_ms, peak, runs, warmup))
    return rows


def write_csv(rows, fh=None):
    """Write rows with the fixed header; returns the text when ``fh`` is None."""
    buf = io.StringIO() if fh is None else fh
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow(r.row())
    return buf.getvalue() if fh is None else None


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def directional_report(rows, label_fast="std_pos", label_slow="std_pos_mamba1", min_batch=32):
    """Per batch >= min_batch: is ``label_fast`` backward faster than ``label_slow``?"""
    by = {(r.label, r.batch): r for r in rows if not r.oom}
    out = []
    for (lab, b), r in sorted(by.items(), key=lambda kv: kv[0][1]):
        if lab != label_fast or b < min_batch or (label_slow, b) not in by:
            continue
        s = by[(label_slow, b)]
        out.append((b, r.bwd_ms, s.bwd_ms, r.bwd_ms < s.bwd_ms))
    return out


# -- compiled vs pure-Python scan kernels ------------------------------------

def kernel_benchmark(batch=8, length=1601, channels=512, d_state=16, runs=3, seed=0):
    """Mean seconds of each scan kernel per available backend, plus the max
    absolute disagreement between backends."""
    rng = make_rng(seed, STREAM_BENCH)
    u = rng.normal(size=(batch, length, channels))
    delta = rng.uniform(1e-3, 0.1, size=(batch, length, channels))
    A = -np.exp(rng.normal(size=(channels, d_state)))
    Bm = rng.normal(size=(batch, length, d_state))
    Cm = rng.normal(size=(batch, length, d_state))
    D = rng.normal(size=channels)
    dy = rng.normal(size=(batch, length, channels))
    heads, hd = max(channels // 64, 1), min(channels, 64)
    a_bar = np.exp(-rng.uniform(1e-3, 0.1, size=(batch, length, heads)))
    b_bar = rng.normal(size=(batch, length, heads, d_state))
    x = rng.normal(size=(batch, length, heads, hd))
    d_skip = rng.normal(size=heads)

    results, outs = {}, {}
    for name in kernels.available_backends():
        jobs = {
            "selective_scan_fwd": lambda: kernels.selective_scan_fwd(u, delta, A, Bm, Cm, D, backend=name),
            "selective_scan_bwd": lambda: kernels.selective_scan_bwd(u, delta, A, Bm, Cm, D, dy, backend=name),
            "ssd_scan_fwd": lambda: kernels.ssd_scan_fwd(a_bar, b_bar, Cm, x, d_skip, backend=name),
        }
        for kname, fn in jobs.items():
            fn()
            ts = []
            for _ in range(runs):
                t = time.perf_counter()
                out = fn()
                ts.append(time.perf_counter() - t)
            results[(name, kname)] = float(np.mean(ts))
            outs[(name, kname)] = out
    diffs = {}
    if "cython" in kernels.available_backends():
        for kname in ("selective_scan_fwd", "selective_scan_bwd", "ssd_scan_fwd"):
            a, b = outs[("python", kname)], outs[("cython", kname)]
            a = a if isinstance(a, tuple) else (a,)
            b = b if isinstance(b, tuple) else (b,)
            diffs[kname] = max(float(np.max(np.abs(p - q))) for p, q in zip(a, b))
    return results, diffs

import csv
import io

import pytest

import burstmamba.bench as B
from helpers import tiny_config


def test_rows_and_schema():
    cfg = tiny_config(seq_len=64)
    rows = B.benchmark(cfg, batches=(2, 4), runs=2, warmup=1, label="tiny")
    text = B.write_csv(rows)
    parsed = list(csv.reader(io.StringIO(text)))
    assert tuple(parsed[0]) == B.CSV_COLUMNS == ("label", "batch", "fwd_ms", "bwd_ms", "eval_ms",
                                                 "peak_bytes", "runs", "warmup")
    assert [r[1] for r in parsed[1:]] == ["2", "4"]
    for r in rows:
        assert r.fwd_ms > 0 and r.bwd_ms > 0 and r.eval_ms > 0 and r.peak_bytes > 0
        assert (r.runs, r.warmup) == (2, 1)


def test_single_run_without_warmup():
    rows = B.benchmark(tiny_config(seq_len=32), batches=(1,), runs=1, warmup=0, measure_memory=False)
    assert len(rows) == 1 and rows[0].fwd_ms > 0 and rows[0].runs == 1 and rows[0].warmup == 0


def test_invalid_runs():
    with pytest.raises(ValueError):
        B.benchmark(tiny_config(), runs=0)


def test_out_of_memory_is_data(monkeypatch):
    real = B._time_cell

    def fake(x, *a, **kw):
        if x.shape[0] > 2:
            raise MemoryError
        return real(x, *a, **kw)

    monkeypatch.setattr(B, "_time_cell", fake)
    rows = B.benchmark(tiny_config(seq_len=32), batches=(2, 8), runs=1, warmup=0)
    assert not rows[0].oom and rows[1].oom
    assert rows[1].row()[2:6] == [B.OOM] * 4


def test_csv_round_trip(tmp_path):
    rows = [B.BenchResult("a", 8, 1.5, 2.5, 0.5, 100, 10, 10), B.BenchResult("b", 8, None, None, None, None, 10, 10)]
    path = tmp_path / "b.csv"
    with open(path, "w", newline="") as fh:
        B.write_csv(rows, fh)
    back = B.read_csv(path)
    assert back[0]["fwd_ms"] == "1.500" and back[1]["bwd_ms"] == "OOM"


def test_directional_report():
    mk = lambda lab, b, bwd: B.BenchResult(lab, b, 1.0, bwd, 1.0, 1, 1, 0)
    rows = [mk("std_pos", 16, 5.0), mk("std_pos_mamba1", 16, 1.0),
            mk("std_pos", 32, 1.0), mk("std_pos_mamba1", 32, 2.0),
            mk("std_pos", 64, 3.0), mk("std_pos_mamba1", 64, 2.0)]
    assert B.directional_report(rows) == [(32, 1.0, 2.0, True), (64, 3.0, 2.0, False)]


def test_presets():
    assert set(B.PRESETS) == {"std_pos", "std_pos_mamba1", "stride4", "stride4_mamba1", "no_emb_proj",
                              "layers1", "layers4", "dstate32", "dstate64", "dstate128"}
    cfg = B.preset_config("stride4_mamba1")
    assert cfg.stride == 4 and cfg.backbone == "mamba1"
    with pytest.raises(KeyError):
        B.preset_config("flash")


def test_kernel_benchmark_compares_backends():
    times, diffs = B.kernel_benchmark(batch=1, length=40, channels=8, d_state=4, runs=1)
    assert {k for _, k in times} == {"selective_scan_fwd", "selective_scan_bwd", "ssd_scan_fwd"}
    assert all(d < 1e-12 for d in diffs.values())


@pytest.mark.skipif(B.resource is None, reason="needs POSIX rlimits")
def test_memory_guard_turns_exhaustion_into_oom_row():
    # ~36 MB per sample at this width: batch 64 cannot fit in a 300 MB budget
    before = B.resource.getrlimit(B.resource.RLIMIT_AS)
    rows = B.benchmark(tiny_config(seq_len=1600), batches=(2, 64, 2), runs=1, warmup=0, memory_limit=300e6)
    assert [r.oom for r in rows] == [False, True, False]
    assert B.resource.getrlimit(B.resource.RLIMIT_AS) == before

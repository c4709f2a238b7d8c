"""Command-line entry point: ``burstmamba <command> [options] [--section.key=value ...]``."""

import argparse
import copy
import glob
import itertools
import os
import sys

import numpy as np

from . import bench as bench_mod
from .config import load_config
from .errors import BurstMambaError, ClassCountMismatch, ConfigError, DatasetEmpty
from .ingest import (SynthSpec, build_dataset, read_dataset, read_label_map,
                     read_manifest, split_dataset, synth_pcap, write_dataset, write_manifest)
from .train import evaluate, train

PCAP_SUFFIXES = (".pcap", ".cap", ".pcapng")

# ablation axes and their default sweep values
AXES = {
    "pos_encoding": [True, False],
    "backbone": ["mamba2", "mamba1"],
    "stride": [1, 2, 4],
    "emb_projection": [True, False],
    "depth": [1, 2, 4],
    "d_state": [16, 32, 64, 128],
    "compact": ["64/64/2", "32/32/2"],
}


def _parse_overrides(extra):
    """``--section.key=value`` or ``--section.key value`` pairs."""
    out, i = [], 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--") or "." not in tok.split("=", 1)[0]:
            raise ConfigError(tok.lstrip("-"), "unrecognised argument")
        if "=" in tok:
            key, val = tok[2:].split("=", 1)
        else:
            if i + 1 >= len(extra):
                raise ConfigError(tok[2:], "missing value")
            key, val = tok[2:], extra[i + 1]
            i += 1
        out.append((key, val))
        i += 1
    return out


def _echo_config(rc, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.ini"), "w") as fh:
        fh.write(rc.to_ini())


def _expand_pcaps(paths):
    files = []
    for p in paths:
        if os.path.isdir(p):
            files += sorted(f for f in glob.glob(os.path.join(p, "**", "*"), recursive=True)
                            if f.lower().endswith(PCAP_SUFFIXES))
        else:
            files.append(p)
    return files


def _resolve_data(path):
    """A dataset file, or a directory holding train/val/test .bpc files."""
    if os.path.isdir(path):
        parts = {}
        for name in ("train", "val", "test"):
            f = os.path.join(path, f"{name}.bpc")
            parts[name] = read_dataset(f) if os.path.exists(f) else None
        if parts["train"] is None:
            raise DatasetEmpty(f"{path}: no train.bpc")
        return parts
    return {"train": read_dataset(path), "val": None, "test": None}


def _model_config(rc, num_classes, **extra):
    if rc.is_set("model.num_classes") and rc.values["model"]["num_classes"] != num_classes:
        raise ClassCountMismatch(f"model.num_classes={rc.values['model']['num_classes']} "
                                 f"but the dataset has {num_classes} classes")
    if not rc.is_set("model.num_classes"):
        # pin the inferred count so the echoed config reproduces the run
        rc.set("model.num_classes", str(num_classes))
    return rc.build("model", **extra)


def _say(msg):
    print(msg, flush=True)


# -- commands ------------------------------------------------------------------

def cmd_synth(args, rc):
    o = rc.build("synth")
    spec = SynthSpec(num_classes=o.num_classes, flows_per_class=o.flows_per_class,
                     packets_per_flow=o.packets_per_flow, seed=o.seed, motif_len=o.motif_len,
                     offset_jitter=o.offset_jitter, protocol=o.protocol, noise_frames=o.noise_frames)
    res = synth_pcap(spec)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "synth.pcap"), "wb") as fh:
        fh.write(res.pcap)
    write_manifest(os.path.join(args.out, "manifest.tsv"), res.manifest)
    _echo_config(rc, args.out)
    _say(f"wrote {res.n_packets} packets, {len(res.manifest)} flows, {o.num_classes} classes to {args.out}")


def cmd_ingest(args, rc):
    o = rc.build("ingest")
    files = _expand_pcaps(args.pcaps)
    if not files:
        raise DatasetEmpty("no capture files found in " + ", ".join(args.pcaps))
    label_map = args.labels or o.label_map
    manifest = args.manifest or o.manifest
    rules = read_label_map(label_map) if label_map else None
    mani = read_manifest(manifest) if manifest else None
    ds, rep = build_dataset(files, label_rules=rules, manifest=mani, n=o.n_packets,
                            m=o.bytes_per_packet, min_packets=o.min_packets,
                            dhcp_filter=o.dhcp_filter)
    if len(ds) == 0:
        raise DatasetEmpty("no flows produced samples")
    os.makedirs(args.out, exist_ok=True)
    write_dataset(ds, os.path.join(args.out, "dataset.bpc"))
    parts = split_dataset(ds.samples(), o.split_ratios, o.split_seed)
    for name, part in zip(("train", "val", "test"), parts):
        write_dataset(part, os.path.join(args.out, f"{name}.bpc"), ds.num_classes, ds.seq_len)
    lines = rep.lines() + [f"samples\t{len(ds)}"]
    lines += [f"class.{c}\t{n}" for c, n in enumerate(ds.class_counts())]
    lines += [f"split.{n}\t{len(p)}" for n, p in zip(("train", "val", "test"), parts)]
    with open(os.path.join(args.out, "report.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    _echo_config(rc, args.out)
    _say("\n".join(lines))


def _train_once(rc, data, out_dir, model_extra=None):
    tr = data["train"]
    mc = _model_config(rc, tr.num_classes, **(model_extra or {}))
    tc = rc.build("train")
    return train(tr, mc, tc, data.get("val"), out_dir=out_dir, verbose=_say)


def cmd_train(args, rc):
    data = _resolve_data(args.data)
    _model_config(rc, data["train"].num_classes)
    _echo_config(rc, args.out)
    res = _train_once(rc, data, args.out)
    _say(f"best epoch {res.best_epoch} val_macro_f1 {res.best_f1:.4f}; checkpoint {os.path.join(args.out, 'best.ckpt')}")
    if data.get("test") is not None and len(data["test"]):
        m = evaluate(data["test"], (res.config, res.params))
        with open(os.path.join(args.out, "metrics.txt"), "w") as fh:
            fh.write(m.to_text())
        _say(f"test accuracy {m.accuracy:.4f} macro_f1 {m.macro_f1:.4f}")


def cmd_eval(args, rc):
    path = args.data
    if os.path.isdir(path):
        path = os.path.join(path, f"{args.split}.bpc")
    ds = read_dataset(path)
    m = evaluate(ds, args.checkpoint, rc.build("train").eval_batch_size)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "metrics.txt"), "w") as fh:
        fh.write(m.to_text())
    _echo_config(rc, args.out)
    _say(m.to_text())


def cmd_bench(args, rc):
    o = rc.build("bench")
    os.makedirs(args.out, exist_ok=True)
    _echo_config(rc, args.out)
    if args.kernels:
        times, diffs = bench_mod.kernel_benchmark(runs=o.runs)
        with open(os.path.join(args.out, "kernels.csv"), "w") as fh:
            fh.write("backend,kernel,seconds\n")
            for (b, k), s in times.items():
                fh.write(f"{b},{k},{s:.6f}\n")
        for (b, k), s in times.items():
            _say(f"{b:7s} {k:20s} {s:.4f}s")
        for k, d in diffs.items():
            _say(f"max |python - cython| {k}: {d:.2e}")
        return
    base = rc.build("model")
    rows = []
    for name in o.configs:
        cfg = bench_mod.preset_config(name, base)
        rows += bench_mod.benchmark(cfg, o.batches, o.runs, o.warmup, label=name,
                                    seed=base.seed, measure_memory=o.memory)
    with open(os.path.join(args.out, "bench.csv"), "w", newline="") as fh:
        bench_mod.write_csv(rows, fh)
    sys.stdout.write(bench_mod.write_csv(rows))
    for b, fast, slow, ok in bench_mod.directional_report(rows):
        _say(f"batch {b}: std_pos bwd {fast:.1f} ms vs std_pos_mamba1 {slow:.1f} ms -> "
             f"{'faster' if ok else 'not faster'}")


def _parse_axis(text):
    if "=" in text:
        name, vals = text.split("=", 1)
        vals = [v.strip() for v in vals.split(",") if v.strip()]
    else:
        name, vals = text, None
    if name not in AXES:
        raise ConfigError(f"ablate.{name}", f"unknown axis; choose from {sorted(AXES)}")
    return name, vals if vals is not None else [str(v) for v in AXES[name]]


def _axis_overrides(name, value):
    if name == "compact":
        d, mlp, layers = (int(v) for v in value.split("/"))
        return {"d_model": d, "d_mlp": mlp, "depth": layers}
    return {name: value}


def population_variance(values):
    v = np.asarray(values, dtype=np.float64)
    return float(((v - v.mean()) ** 2).mean())


def cmd_ablate(args, rc):
    axes = [_parse_axis(a) for a in args.axes]
    datasets = [(os.path.basename(os.path.normpath(p)), _resolve_data(p)) for p in args.data]
    if args.cartesian:
        cells = [list(zip([a for a, _ in axes], combo)) for combo in itertools.product(*[v for _, v in axes])]
    else:
        cells = [[(a, v)] for a, vals in axes for v in vals]
    os.makedirs(args.out, exist_ok=True)
    _echo_config(rc, args.out)
    header = (["variant"] + [f"AC_{n}" for n, _ in datasets] + [f"F1_{n}" for n, _ in datasets]
              + ["AVG", "MIN", "MAX", "VAR", "error"])
    table = []
    for ci, cell in enumerate(cells):
        label = "+".join(f"{a}={v}" for a, v in cell)
        acs, f1s, err = [], [], ""
        try:
            cell_rc = copy.deepcopy(rc)
            for a, v in cell:
                for k, raw in _axis_overrides(a, v).items():
                    cell_rc.set(f"model.{k}", str(raw))
            for dname, data in datasets:
                ds_rc = copy.deepcopy(cell_rc)
                mc = _model_config(ds_rc, data["train"].num_classes)
                out_dir = os.path.join(args.out, f"cell{ci:02d}", dname)
                _echo_config(ds_rc, out_dir)
                res = train(data["train"], mc, ds_rc.build("train"), data.get("val"), out_dir=out_dir, verbose=_say)
                test = data.get("test") if data.get("test") is not None and len(data["test"]) else data.get("val")
                if test is None:
                    test = data["train"]
                m = evaluate(test, (mc, res.params))
                with open(os.path.join(out_dir, "metrics.txt"), "w") as fh:
                    fh.write(m.to_text())
                acs.append(m.accuracy)
                f1s.append(m.macro_f1)
        except BurstMambaError as exc:
            err = str(exc)
        if f1s and not err:
            agg = [np.mean(f1s), np.min(f1s), np.max(f1s), population_variance(f1s)]
            row = [label] + [f"{v:.4f}" for v in acs] + [f"{v:.4f}" for v in f1s] + [f"{v:.6g}" for v in agg] + [""]
        else:
            row = [label] + [""] * (2 * len(datasets) + 4) + [err]
        table.append(row)
        _say(",".join(str(c) for c in row))
    with open(os.path.join(args.out, "ablation.csv"), "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in table:
            fh.write(",".join(str(c) for c in row) + "\n")


# -- argument parsing ------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="burstmamba", description=__doc__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI run configuration")
    common.add_argument("--seed", type=int, help="sets model.seed, train.seed and synth.seed")
    common.add_argument("--out", default="out", help="output directory")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="write a synthetic labelled capture")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("ingest", parents=[common], help="captures -> burst dataset + splits")
    s.add_argument("pcaps", nargs="+", help="capture files or directories")
    s.add_argument("--labels", help="label map: glob<TAB>class per line")
    s.add_argument("--manifest", help="flow manifest TSV from `synth`")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("train", parents=[common], help="train on a dataset directory or file")
    s.add_argument("--data", required=True, help="directory with train/val/test.bpc, or one .bpc file")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    s.add_argument("--checkpoint", required=True, help="best.ckpt or last.ckpt from `train`")
    s.add_argument("--data", required=True, help="dataset directory or .bpc file")
    s.add_argument("--split", default="test", help="split file used when --data is a directory")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("bench", parents=[common], help="timing table across batch sizes")
    s.add_argument("--kernels", action="store_true", help="compare compiled and numpy scan kernels")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("ablate", parents=[common], help="train+eval sweep over ablation axes")
    s.add_argument("--axes", action="append", required=True,
                   help="axis name or name=v1,v2 (repeatable); axes: " + ", ".join(AXES))
    s.add_argument("--data", action="append", required=True, help="dataset directory (repeatable)")
    s.add_argument("--cartesian", action="store_true", help="cross the axes instead of listing them")
    s.set_defaults(func=cmd_ablate)
    return p


def main(argv=None):
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    try:
        overrides = _parse_overrides(extra)
        if args.seed is not None:
            overrides = [("model.seed", str(args.seed)), ("train.seed", str(args.seed)),
                         ("synth.seed", str(args.seed))] + overrides
        rc = load_config(args.config, overrides)
        args.func(args, rc)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (BurstMambaError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

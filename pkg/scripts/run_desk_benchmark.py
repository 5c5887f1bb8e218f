#!/usr/bin/env python3
"""Desk-scale benchmark: DANN vs MTDA-C2 vs MTDA-R on the synthetic
multi-device dataset (1 source + 3 targets, 10 classes), averaged over
pinned seeds. Mirrors the acceptance benchmark but reports all devices and
writes a JSON summary.

Usage: python scripts/run_desk_benchmark.py [workdir] [--epochs N] [--seeds a,b,...]
"""

import argparse
import json
import time
from pathlib import Path

import numpy as np

from mtda.geometry import DomainEntry
from mtda.synth import SynthConfig, make_dataset
from mtda.training import TrainConfig, evaluate, train

DEVICES = [("A", 0.0), ("B", 0.2), ("C", 0.6), ("D", 1.2)]


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("workdir", nargs="?", default="runs/desk_benchmark")
    parser.add_argument("--epochs", type=int, default=20)
    parser.add_argument("--seeds", default="0,1,2,3,4")
    args = parser.parse_args()
    seeds = [int(s) for s in args.seeds.split(",")]
    work = Path(args.workdir)

    cfg = SynthConfig(
        n_classes=10,
        devices=DEVICES,
        samples_per_device_per_class=32,
        parallel_fraction=0.5,
        seed=1234,
    )
    rows = make_dataset(cfg, work / "data")
    index_table = {d: DomainEntry(mag, i) for i, (d, mag) in enumerate(DEVICES)}

    start = time.monotonic()
    summary = {}
    for mode in ("dann", "mtda-c2", "mtda-r"):
        per_device = {d: [] for d, _ in DEVICES}
        for seed in seeds:
            tc = TrainConfig(mode=mode, lambda_d=1.0, epochs=args.epochs, seed=seed, normalize_index=True)
            result = train(tc, rows, index_table)
            report = evaluate(result.model, rows)
            for d, stats in report.per_device.items():
                per_device[d].append(stats["accuracy"])
        summary[mode] = {d: float(np.mean(v)) for d, v in per_device.items()}
        print(f"{mode:8s} " + "  ".join(f"{d}={summary[mode][d]:.3f}" for d, _ in DEVICES), flush=True)

    summary["wall_time_s"] = time.monotonic() - start
    out = work / "summary.json"
    out.write_text(json.dumps(summary, indent=2) + "\n")
    print(f"wrote {out} ({summary['wall_time_s']:.0f}s)")


if __name__ == "__main__":
    main()

#!/usr/bin/env python3
"""Calibrate, train and run the closed loop on the healthy-analog fixture.

Reproduces the headline tracking numbers for both decoders: per-movement
nMAE on each playlist entry, wall-clock cost of every stage, and the
end-to-end tick latency percentile. Optionally writes the session logs.
"""

from __future__ import annotations

import argparse
import time
from pathlib import Path

from emgfes.fixtures import get_fixture
from emgfes.loop import run_calibration, run_closed_loop, train_model
from emgfes.persist import model_hash
from emgfes.report import nmae_by_entry


def run_one(model_name: str, seed: int, out_dir: Path | None) -> dict:
    fixture = get_fixture("synthetic_healthy")
    config = fixture.run_config(seed=seed, model=model_name)

    t0 = time.perf_counter()
    cal = run_calibration(config, fixture)
    cal_s = time.perf_counter() - t0

    t0 = time.perf_counter()
    model = train_model(config, cal)
    train_s = time.perf_counter() - t0

    result = run_closed_loop(config, model=model, fixture=fixture)
    entries, mean = nmae_by_entry(result.log)

    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / f"healthy_{model_name}_seed{seed}.emgs"
        path.write_bytes(result.data)
        print(f"  log -> {path}")

    return {
        "model": model_name,
        "hash": model_hash(model)[:12],
        "n_cal": cal.n_samples,
        "cal_s": cal_s,
        "train_s": train_s,
        "loop_s": result.wall_s,
        "p99_ms": result.tick_p99_ms,
        "entries": entries,
        "mean": mean,
    }


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=3)
    parser.add_argument("--models", nargs="+", default=["lda", "gbdt"], choices=["lda", "gbdt"])
    parser.add_argument("--out", type=Path, help="directory for session logs")
    args = parser.parse_args()

    rows = []
    for name in args.models:
        print(f"[{name}] calibrating, training and running (seed {args.seed})...")
        rows.append(run_one(name, args.seed, args.out))

    print()
    print(f"{'model':<6} {'cal samples':>11} {'cal s':>7} {'train s':>8} {'loop s':>7} {'p99 ms':>7} {'nMAE':>7}")
    for r in rows:
        print(
            f"{r['model']:<6} {r['n_cal']:>11} {r['cal_s']:>7.2f} {r['train_s']:>8.2f} "
            f"{r['loop_s']:>7.2f} {r['p99_ms']:>7.2f} {r['mean']:>7.4f}"
        )

    print()
    for r in rows:
        per = "  ".join(f"{e.movement.name.lower()}={e.value:.4f}" for e in r["entries"])
        print(f"{r['model']} ({r['hash']}): {per}")


if __name__ == "__main__":
    main()

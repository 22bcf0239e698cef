#!/usr/bin/env python3
"""Controller-speed sweep over the stimulation state machine.

Drives the FSM open-loop with a saturated cursor for a fixed horizon at
every speed setting and reports the inter-command interval, then prints
the cursor step-scale boost schedule implied by each speed.
"""

from __future__ import annotations

import argparse

import numpy as np

from emgfes.stim import StimFsm, StimParams, fsm_step, speed_multiplier, speed_schedule
from emgfes.stream import SEGMENT_PERIOD_US

TICK_S = SEGMENT_PERIOD_US / 1e6


def sweep_intervals(horizon_s: float, cursor_y: float) -> None:
    n_ticks = int(horizon_s / TICK_S)
    print(f"saturated cursor y={cursor_y}, horizon {horizon_s:.0f} s ({n_ticks} ticks)")
    print()
    print(f"{'speed':>5} {'commands':>8} {'gap ticks':>9} {'gap s':>7} {'expected s':>10}")
    for speed in range(1, 11):
        params = StimParams(controller_speed=speed)
        fsm = StimFsm(params=params)
        fired = []
        for k in range(n_ticks):
            fsm, cmd, _scale = fsm_step(fsm, cursor_y, k * TICK_S)
            if cmd is not None:
                fired.append(k)
        gaps = np.diff(fired)
        gap_ticks = int(gaps[0]) if gaps.size else 0
        assert gaps.size == 0 or np.all(gaps == gap_ticks), "interval drifted"
        # stim dwell + wait dwell + trigger hold-off of `speed` reading ticks
        expected = params.stim_time_s + params.wait_time_s + speed * TICK_S
        print(
            f"{speed:>5} {len(fired):>8} {gap_ticks:>9} {gap_ticks * TICK_S:>7.3f} {expected:>10.3f}"
        )


def schedule_table() -> None:
    print()
    print("step-scale boost schedule (1/m decaying to 1.0 over `speed` reading ticks)")
    print(f"{'speed':>5} {'mult':>5} " + " ".join(f"{f'it{i}':>6}" for i in range(11)))
    for speed in range(1, 11):
        row = [
            f"{speed_schedule(speed, it):>6.3f}" if it <= speed else f"{'':>6}"
            for it in range(11)
        ]
        print(f"{speed:>5} {speed_multiplier(speed):>5.2f} " + " ".join(row))


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--horizon", type=float, default=60.0, help="sweep duration, seconds")
    parser.add_argument("--cursor-y", type=float, default=0.9)
    args = parser.parse_args()

    sweep_intervals(args.horizon, args.cursor_y)
    schedule_table()


if __name__ == "__main__":
    main()

"""Session-level evaluation: metric reports computed from a parsed log.

The log header carries the full run configuration, so every analysis here
(trajectory alignment, per-ramp windows, stimulation binning) can be
reconstructed from the log file alone; replaying a file through these
functions is deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import RunConfig, config_from_dict
from .cursor import TaskMapping
from .labels import Movement, StimChannel
from .metrics import (
    AccuracyReport,
    RampWindow,
    RomReport,
    StimLevelReport,
    TrajectoryPair,
    lowpass_trace,
    nmae,
    online_accuracy,
    rom,
    stim_level_bins,
)
from .plant import PLANT_RATE_HZ, PlaylistEntry
from .sessionlog import SessionLog


def header_config(log: SessionLog) -> RunConfig:
    return config_from_dict(log.header["config"], where="log header")


def header_mapping(log: SessionLog) -> TaskMapping:
    return header_config(log).cursor.task_mapping()


def header_playlist(log: SessionLog) -> tuple[PlaylistEntry, ...]:
    return tuple(PlaylistEntry(r.spec(), r.cycles) for r in header_config(log).reference)


def trajectory_pair(
    log: SessionLog, task_axis: int = 1, t_range_us: tuple[int, int] | None = None
) -> TrajectoryPair:
    """Reference vs predicted cursor on their common ticks."""
    t_ref = log.reference_t_us
    t_cur = log.cursor_t_us
    if t_range_us is not None:
        lo, hi = t_range_us
        ref_sel = (t_ref >= lo) & (t_ref < hi)
        cur_sel = (t_cur >= lo) & (t_cur < hi)
    else:
        ref_sel = np.ones(t_ref.size, dtype=bool)
        cur_sel = np.ones(t_cur.size, dtype=bool)
    common, ri, ci = np.intersect1d(
        t_ref[ref_sel], t_cur[cur_sel], return_indices=True
    )
    if common.size == 0:
        raise ValueError("no common reference/cursor ticks in range")
    ref = log.reference_xy[ref_sel][ri]
    cur = log.cursor_xy[cur_sel][ci]
    return TrajectoryPair(reference=ref, predicted=cur, task_axis=task_axis)


@dataclass(frozen=True)
class EntryNmae:
    movement: Movement
    task_axis: int
    value: float


def nmae_by_entry(log: SessionLog) -> tuple[list[EntryNmae], float]:
    """Per-playlist-entry nMAE on each entry's own task axis, plus the mean."""
    mapping = header_mapping(log)
    playlist = header_playlist(log)
    out: list[EntryNmae] = []
    offset = 0.0
    for entry in playlist:
        span = (int(round(offset * 1e6)), int(round((offset + entry.duration_s) * 1e6)))
        offset += entry.duration_s
        if entry.spec.movement == Movement.REST:
            continue
        d = mapping.direction_of(entry.spec.movement)
        pair = trajectory_pair(log, task_axis=d.axis, t_range_us=span)
        out.append(EntryNmae(entry.spec.movement, d.axis, nmae(pair)))
    if not out:
        raise ValueError("playlist has no movement entries")
    mean = float(np.mean([e.value for e in out]))
    return out, mean


def session_accuracy(log: SessionLog) -> AccuracyReport:
    pair = trajectory_pair(log, task_axis=1)
    return online_accuracy(pair, header_mapping(log))


def ramp_windows(
    log: SessionLog,
    movement: Movement | None = None,
    scored_fraction: float = 1.0,
) -> list[RampWindow]:
    """One window per ramp cycle on the plant-angle timebase.

    The window spans the whole cycle (rest included, so the detrend
    baseline anchors on resting angles); the scored hold sub-window is the
    middle ``scored_fraction`` of the active (nonzero-reference) span.
    """
    if not 0.0 < scored_fraction <= 1.0:
        raise ValueError("scored_fraction must be in (0, 1]")
    t_angle = log.angle_t_us
    windows: list[RampWindow] = []
    offset = 0.0
    for entry in header_playlist(log):
        spec = entry.spec
        for c in range(entry.cycles):
            if movement is not None and spec.movement != movement:
                continue
            start_s = offset + c * spec.cycle_s
            end_s = start_s + spec.cycle_s
            active_s = spec.cycle_s - spec.rest_s
            mid = start_s + active_s / 2.0
            half = active_s * scored_fraction / 2.0
            i0 = int(np.searchsorted(t_angle, int(round(start_s * 1e6))))
            i1 = int(np.searchsorted(t_angle, int(round(end_s * 1e6))))
            h0 = int(np.searchsorted(t_angle, int(round((mid - half) * 1e6))))
            h1 = int(np.searchsorted(t_angle, int(round((mid + half) * 1e6))))
            i1 = min(i1, t_angle.size)
            if i0 >= i1 or h0 >= h1:
                continue
            windows.append(
                RampWindow(
                    movement=spec.movement,
                    start=i0,
                    end=i1,
                    hold_start=max(h0, i0),
                    hold_end=min(h1, i1),
                )
            )
        offset += entry.duration_s
    return windows


def rom_report(
    log: SessionLog,
    movement: Movement | None = None,
    scored_fraction: float = 1.0,
    lowpass_hz: float = 2.0,
) -> RomReport:
    angles = lowpass_trace(log.angle_deg, fs=PLANT_RATE_HZ, cutoff_hz=lowpass_hz)
    windows = ramp_windows(log, movement=movement, scored_fraction=scored_fraction)
    return rom(angles, windows)


def stim_level_report(log: SessionLog, channel: StimChannel) -> StimLevelReport:
    config = header_config(log)
    sel = log.stim_channel == int(channel)
    return stim_level_bins(log.stim_current_ma[sel], config.stim.max_current_ma(channel))


def evaluate(log: SessionLog) -> dict:
    """Full structured report for one session log (CLI `eval` output)."""
    out: dict = {
        "fixture": log.header.get("fixture"),
        "seed": log.header.get("seed"),
        "model_hash": log.header.get("model_hash"),
        "n_feature_ticks": int(log.features_t_us.size),
        "n_predictions": int(log.predictions_t_us.size),
        "n_stim_commands": int(log.stim_t_us.size),
        "duration_s": float(log.reference_t_us[-1] / 1e6) if log.reference_t_us.size else 0.0,
    }
    try:
        entries, mean = nmae_by_entry(log)
        out["nmae"] = {
            "mean": mean,
            "per_entry": [
                {"movement": e.movement.name.lower(), "axis": e.task_axis, "value": e.value}
                for e in entries
            ],
        }
    except (ValueError, KeyError):
        out["nmae"] = None
    try:
        acc = session_accuracy(log)
        out["online_accuracy"] = {
            "overall": acc.overall,
            "per_class": {
                m.name.lower(): (None if math.isnan(v) else v)
                for m, v in acc.per_class.items()
            },
        }
    except ValueError:
        out["online_accuracy"] = None
    if log.angle_t_us.size:
        reports = {}
        for movement in (Movement.DORSIFLEXION, Movement.PLANTARFLEXION):
            rep = rom_report(log, movement=movement)
            if rep.rom_deg:
                reports[movement.name.lower()] = {
                    "rom_deg": list(rep.rom_deg),
                    "trom_pct": list(rep.trom_pct),
                }
        out["rom"] = reports or None
    else:
        out["rom"] = None
    if log.stim_t_us.size:
        stim = {}
        for channel in StimChannel:
            rep = stim_level_report(log, channel)
            stim[channel.name.lower()] = {
                "counts": rep.counts.tolist(),
                "stable_bins": list(rep.stable),
            }
        out["stim_levels"] = stim
    else:
        out["stim_levels"] = None
    return out

"""Log-driven session reports: header reconstruction, nMAE, windows, evaluate."""

from __future__ import annotations

import io
import json

import numpy as np
import pytest

from emgfes.config import config_dict
from emgfes.labels import Direction, Movement
from emgfes.report import (
    evaluate,
    header_config,
    header_mapping,
    header_playlist,
    nmae_by_entry,
    ramp_windows,
    rom_report,
    session_accuracy,
    trajectory_pair,
)
from emgfes.sessionlog import SessionWriter, read_session

from conftest import short_config


def test_header_config_round_trip(short_run):
    cfg = header_config(short_run.log)
    assert cfg.model == "lda" and cfg.seed == 7
    assert cfg == short_config()[0]


def test_header_playlist(short_run):
    playlist = header_playlist(short_run.log)
    assert len(playlist) == 1
    entry = playlist[0]
    assert entry.spec.movement == Movement.PLANTARFLEXION
    assert entry.cycles == 2
    assert entry.duration_s == pytest.approx(20.0)


def test_header_mapping(short_run):
    mapping = header_mapping(short_run.log)
    assert mapping.directions[Direction.DOWN] == Movement.PLANTARFLEXION


def test_trajectory_pair_alignment(short_run):
    log = short_run.log
    pair = trajectory_pair(log)
    assert pair.reference.shape == pair.predicted.shape
    assert pair.reference.shape[0] == log.reference_t_us.size  # same tick grid
    half = trajectory_pair(log, t_range_us=(0, 10_000_000))
    assert 0 < half.reference.shape[0] < pair.reference.shape[0]
    with pytest.raises(ValueError, match="no common"):
        trajectory_pair(log, t_range_us=(10**12, 2 * 10**12))


def test_nmae_by_entry(short_run):
    entries, mean = nmae_by_entry(short_run.log)
    assert len(entries) == 1
    e = entries[0]
    assert e.movement == Movement.PLANTARFLEXION and e.task_axis == 1
    assert mean == e.value
    assert 0.0 <= e.value < 1.0


def test_ramp_windows(short_run):
    log = short_run.log
    windows = ramp_windows(log)
    assert len(windows) == 2  # one per cycle
    for w in windows:
        assert w.movement == Movement.PLANTARFLEXION
        assert w.start <= w.hold_start < w.hold_end <= w.end
    assert windows[0].end <= windows[1].start + 1
    assert ramp_windows(log, movement=Movement.DORSIFLEXION) == []
    narrow = ramp_windows(log, scored_fraction=0.5)
    assert (narrow[0].hold_end - narrow[0].hold_start) < (
        windows[0].hold_end - windows[0].hold_start
    )
    with pytest.raises(ValueError):
        ramp_windows(log, scored_fraction=0.0)


def test_rom_report(short_run):
    rep = rom_report(short_run.log, movement=Movement.PLANTARFLEXION)
    assert len(rep.rom_deg) == 2 and len(rep.trom_pct) == 2
    assert all(v > 0 for v in rep.rom_deg)
    assert not any(np.isnan(rep.trom_pct))


def test_session_accuracy(short_run):
    acc = session_accuracy(short_run.log)
    assert 0.0 <= acc.overall <= 1.0
    assert Movement.PLANTARFLEXION in acc.per_class


def test_evaluate_structure(short_run):
    r = evaluate(short_run.log)
    json.dumps(r)  # CLI prints this as JSON
    assert r["fixture"] == "synthetic_healthy" and r["seed"] == 7
    assert r["n_feature_ticks"] > 0 and r["n_predictions"] > 0
    assert r["n_stim_commands"] == 0 and r["stim_levels"] is None
    assert r["duration_s"] == pytest.approx(20.0, abs=0.05)
    assert r["nmae"]["per_entry"][0]["movement"] == "plantarflexion"
    assert r["nmae"]["per_entry"][0]["axis"] == 1
    assert r["nmae"]["mean"] == r["nmae"]["per_entry"][0]["value"]
    assert len(r["rom"]["plantarflexion"]["rom_deg"]) == 2
    assert r["online_accuracy"]["overall"] >= 0.0


def test_evaluate_handles_empty_log():
    cfg, _ = short_config()
    sink = io.BytesIO()
    SessionWriter(sink=sink, header={"config": config_dict(cfg)}).close()
    r = evaluate(read_session(io.BytesIO(sink.getvalue())))
    assert r["nmae"] is None and r["rom"] is None and r["stim_levels"] is None
    assert r["online_accuracy"] is None
    assert r["n_feature_ticks"] == 0 and r["duration_s"] == 0.0


def test_stim_level_report_present_when_stimulated(s1_runs):
    r = evaluate(s1_runs[0].log)
    assert r["n_stim_commands"] > 0
    levels = r["stim_levels"]
    assert set(levels) == {"dorsiflexion", "plantarflexion"}
    for rep in levels.values():
        assert len(rep["counts"]) == 10
        assert sum(rep["counts"]) >= 0

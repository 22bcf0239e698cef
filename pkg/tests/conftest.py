"""Shared fixtures: the expensive closed-loop runs, built once per session."""

from __future__ import annotations

import dataclasses
import time

import numpy as np
import pytest

from emgfes.calibration import CalibrationSet
from emgfes.fixtures import get_fixture
from emgfes.gbdt import train_gbdt
from emgfes.lda import train_lda
from emgfes.loop import RunResult, run_calibration, run_closed_loop


@dataclasses.dataclass(frozen=True)
class TimedRun:
    """One calibrate/train/run item with its wall timings."""

    cal_s: float
    train_s: float
    result: RunResult
    model: object


@pytest.fixture(scope="session")
def healthy_cal() -> tuple[CalibrationSet, float]:
    fx = get_fixture("synthetic_healthy")
    t0 = time.perf_counter()
    cal = run_calibration(fx.run_config(seed=3), fixture=fx)
    return cal, time.perf_counter() - t0


@pytest.fixture(scope="session")
def healthy_lda(healthy_cal) -> TimedRun:
    cal, cal_s = healthy_cal
    fx = get_fixture("synthetic_healthy")
    t0 = time.perf_counter()
    model = train_lda(cal)
    train_s = time.perf_counter() - t0
    result = run_closed_loop(fx.run_config(seed=3, model="lda"), model=model, fixture=fx)
    return TimedRun(cal_s=cal_s, train_s=train_s, result=result, model=model)


@pytest.fixture(scope="session")
def healthy_gbdt(healthy_cal) -> TimedRun:
    cal, cal_s = healthy_cal
    fx = get_fixture("synthetic_healthy")
    t0 = time.perf_counter()
    model = train_gbdt(cal)
    train_s = time.perf_counter() - t0
    result = run_closed_loop(fx.run_config(seed=3, model="gbdt"), model=model, fixture=fx)
    return TimedRun(cal_s=cal_s, train_s=train_s, result=result, model=model)


@pytest.fixture(scope="session")
def s1_runs() -> tuple[RunResult, RunResult, RunResult]:
    """Stimulated run twice (byte-identity check) plus an unstimulated control."""
    fx = get_fixture("synthetic_s1")
    on_cfg = fx.run_config(seed=0, stim_enabled=True)
    first = run_closed_loop(on_cfg, fixture=fx)
    second = run_closed_loop(on_cfg, fixture=fx)
    control = run_closed_loop(fx.run_config(seed=0, stim_enabled=False), fixture=fx)
    return first, second, control


@pytest.fixture(scope="session")
def proportional_run() -> RunResult:
    fx = get_fixture("synthetic_s1_proportional")
    return run_closed_loop(fx.run_config(seed=0, stim_enabled=True), fixture=fx)


def short_config(seed: int = 7, **overrides):
    """A 20 s two-cycle plantarflexion tracking config for cheap full-loop tests."""
    fx = get_fixture("synthetic_healthy")
    cfg = fx.run_config(seed=seed, model="lda", **overrides)
    return dataclasses.replace(
        cfg, reference=(dataclasses.replace(cfg.reference[1], cycles=2),)
    ), fx


@pytest.fixture(scope="session")
def short_run() -> RunResult:
    cfg, fx = short_config()
    return run_closed_loop(cfg, fixture=fx)


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)

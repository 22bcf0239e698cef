"""Run configuration: typed parameter groups, YAML loading and presets.

A RunConfig fully describes one session (mode, participant fixture, model
choice and the pipeline/cursor/stimulation/reference parameter groups).
Construction validates ranges; `load_config` turns any YAML problem into
ConfigError so the CLI can exit with a config-error status.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import yaml

from .cursor import DEFAULT_DECAY_FACTOR, ReferenceSpec, TaskMapping
from .labels import Direction, Movement
from .stim import StimParams
from .stream import WINDOW_LEN_BY_MS, FeaturePipeline, FilterState

MODES = ("calibrate", "run", "replay", "simulate")
MODELS = ("gbdt", "lda")


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    window_ms: int = 252
    blank_threshold_adu: float = 200.0
    ema_alpha: float = 0.1
    notch_hz: float | None = 50.0
    bandpass_hz: tuple[float, float] | None = (10.0, 500.0)

    def __post_init__(self):
        if self.window_ms not in WINDOW_LEN_BY_MS:
            raise ValueError(
                f"window_ms must be one of {sorted(WINDOW_LEN_BY_MS)}, got {self.window_ms}"
            )
        if self.blank_threshold_adu <= 0:
            raise ValueError("blank_threshold_adu must be > 0")
        if self.bandpass_hz is not None:
            lo, hi = self.bandpass_hz
            if not 0 < lo < hi:
                raise ValueError(f"bandpass_hz must satisfy 0 < lo < hi, got {self.bandpass_hz}")

    @property
    def window_len(self) -> int:
        return WINDOW_LEN_BY_MS[self.window_ms]

    def make_filters(self) -> FilterState:
        return FilterState(
            bandpass_hz=self.bandpass_hz, notch_hz=self.notch_hz, ema_alpha=self.ema_alpha
        )

    def make_pipeline(self, blanking_enabled: bool = True) -> FeaturePipeline:
        return FeaturePipeline(
            window_len=self.window_len,
            filters=self.make_filters(),
            blank_threshold_adu=self.blank_threshold_adu,
            blanking_enabled=blanking_enabled,
        )


@dataclass(frozen=True)
class CursorConfig:
    decay_factor: float = DEFAULT_DECAY_FACTOR
    mapping: dict = field(
        default_factory=lambda: {
            "up": "dorsiflexion",
            "down": "plantarflexion",
            "right": "inversion",
            "left": "eversion",
        }
    )

    def task_mapping(self) -> TaskMapping:
        directions = {}
        for dname, mname in self.mapping.items():
            try:
                direction = Direction(dname)
            except ValueError as exc:
                raise ValueError(f"unknown direction {dname!r}") from exc
            try:
                directions[direction] = Movement.from_name(mname)
            except KeyError as exc:
                raise ValueError(f"unknown movement {mname!r}") from exc
        return TaskMapping(directions=directions)


@dataclass(frozen=True)
class ReferenceConfig:
    """One reference-trajectory block: a movement repeated for `cycles` cycles."""

    movement: str = "dorsiflexion"
    kind: str = "ramp"
    rate_hz: float = 0.1
    hold_s: float = 0.5
    rest_s: float = 0.5
    levels: tuple[float, ...] = (1.0,)
    level_hold_s: float = 10.0
    transition_s: float = 2.0
    cycles: int = 1

    def __post_init__(self):
        if self.cycles < 1:
            raise ValueError("cycles must be >= 1")
        self.spec()  # surface ReferenceSpec range errors at construction

    def spec(self) -> ReferenceSpec:
        return ReferenceSpec(
            movement=Movement.from_name(self.movement),
            kind=self.kind,
            rate_hz=self.rate_hz,
            hold_s=self.hold_s,
            rest_s=self.rest_s,
            levels=tuple(self.levels),
            level_hold_s=self.level_hold_s,
            transition_s=self.transition_s,
        )


@dataclass(frozen=True)
class RunConfig:
    mode: str = "simulate"
    fixture: str = "synthetic_healthy"
    model: str = "gbdt"
    seed: int = 0
    stim_enabled: bool = False
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    cursor: CursorConfig = field(default_factory=CursorConfig)
    stim: StimParams = field(default_factory=StimParams)
    reference: tuple[ReferenceConfig, ...] = ()

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.model not in MODELS:
            raise ValueError(f"model must be one of {MODELS}, got {self.model!r}")
        self.cursor.task_mapping()


def _coerce(cls, data, where: str):
    """Build a config dataclass from a YAML mapping, rejecting unknown keys."""
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(data).__name__}")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {unknown}")
    kwargs = dict(data)
    for f in dataclasses.fields(cls):
        if f.name in kwargs and isinstance(kwargs[f.name], list):
            kwargs[f.name] = tuple(kwargs[f.name])
    try:
        return cls(**kwargs)
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def config_from_dict(data: dict, where: str = "config") -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping")
    data = dict(data)
    groups = {
        "pipeline": PipelineConfig,
        "cursor": CursorConfig,
        "stim": StimParams,
    }
    for key, cls in groups.items():
        if key in data:
            data[key] = _coerce(cls, data[key], f"{where}.{key}")
    if "reference" in data:
        entries = data["reference"]
        if not isinstance(entries, list):
            raise ConfigError(f"{where}.reference: expected a list")
        data["reference"] = tuple(
            _coerce(ReferenceConfig, e, f"{where}.reference[{i}]")
            for i, e in enumerate(entries)
        )
    return _coerce(RunConfig, data, where)


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if data is None:
        data = {}
    return config_from_dict(data, where=str(path))


def config_dict(config: RunConfig) -> dict:
    """JSON-ready snapshot of a RunConfig (for the session log header)."""

    def plain(value):
        if dataclasses.is_dataclass(value) and not isinstance(value, type):
            return {f.name: plain(getattr(value, f.name)) for f in dataclasses.fields(value)}
        if isinstance(value, dict):
            return {str(k): plain(v) for k, v in value.items()}
        if isinstance(value, (list, tuple)):
            return [plain(v) for v in value]
        return value

    return plain(config)


PRESET_PACKAGE = "emgfes.presets"


def list_presets() -> tuple[str, ...]:
    root = resources.files(PRESET_PACKAGE)
    return tuple(
        sorted(p.name[: -len(".yaml")] for p in root.iterdir() if p.name.endswith(".yaml"))
    )


def load_stim_preset(name: str) -> tuple[StimParams, str]:
    """Load a shipped stimulation preset; returns (params, model name)."""
    res = resources.files(PRESET_PACKAGE) / f"{name}.yaml"
    try:
        text = res.read_text()
    except (FileNotFoundError, OSError) as exc:
        raise ConfigError(
            f"unknown preset {name!r}; available: {', '.join(list_presets())}"
        ) from exc
    data = yaml.safe_load(text)
    if not isinstance(data, dict) or "stim" not in data:
        raise ConfigError(f"preset {name!r} must contain a 'stim' group")
    params = _coerce(StimParams, data["stim"], f"preset {name}")
    model = data.get("model", "gbdt")
    if model not in MODELS:
        raise ConfigError(f"preset {name!r}: unknown model {model!r}")
    return params, model

"""Experiment configuration: one hierarchical JSON document plus dotted overrides."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import typing
from dataclasses import dataclass, field

from .navigation import NavGains
from .perception import DetectConfig, RenderConfig, SensorConfig
from .runners import CONTROL, DEFAULT_PARAMS, FOLLOW_ROBOT, WEARABLE, PaceDistribution, RunnerModelParams
from .telemetry import GpsConfig
from .track import PlantNoiseParams, TrackModel

SNOOPIE = "snoopie"
CONDITIONS = (SNOOPIE, WEARABLE, CONTROL)
CONDITION_MODEL = {SNOOPIE: FOLLOW_ROBOT, WEARABLE: WEARABLE, CONTROL: CONTROL}
PERCEPTION_MODES = ("vision", "geometric")


class ConfigError(ValueError):
    pass


def _check(cond: bool, msg: str):
    if not cond:
        raise ConfigError(msg)


@dataclass(frozen=True)
class PerceptionConfig:
    render: RenderConfig = field(default_factory=RenderConfig)
    detect: DetectConfig = field(default_factory=DetectConfig)
    frame_dropout: float = 0.0
    geometric_offset_noise: float = 0.01
    geometric_angle_noise: float = 0.01

    def __post_init__(self):
        _check(0.0 <= self.frame_dropout < 1.0, "perception.frame_dropout must be in [0, 1)")
        _check(self.geometric_offset_noise >= 0 and self.geometric_angle_noise >= 0,
               "geometric perception noise must be non-negative")


@dataclass(frozen=True)
class CalibrationConfig:
    initial_speed: float = 1.5
    duration: float = 30.0
    k_cal: float = 0.05
    deadband: float = 0.05
    u_min: float = 0.5
    u_max: float = 2.5
    discard_fraction: float = 0.2
    pause: float = 10.0

    def __post_init__(self):
        _check(self.duration >= 10.0, "calibration.duration must be at least 10 s")
        _check(self.k_cal > 0, "calibration.k_cal must be positive")
        _check(self.deadband >= 0, "calibration.deadband must be non-negative")
        _check(0 < self.u_min < self.u_max, "calibration needs 0 < u_min < u_max")
        _check(self.u_min <= self.initial_speed <= self.u_max, "calibration.initial_speed outside [u_min, u_max]")
        _check(0 <= self.discard_fraction < 1, "calibration.discard_fraction must be in [0, 1)")
        _check(self.pause >= 0, "calibration.pause must be non-negative")


@dataclass(frozen=True)
class PacingConfig:
    delta_u: float = 0.5
    cap: float = 2.5
    u_floor: float = 0.5

    def __post_init__(self):
        _check(self.delta_u > 0, "pacing.delta_u must be positive")
        _check(0 < self.cap <= 2.6, "pacing.cap must be in (0, 2.6]")
        _check(self.u_floor > 0, "pacing.u_floor must be positive")


@dataclass(frozen=True)
class ScheduleConfig:
    n_segments: int = 4
    segment_duration: float = 30.0
    first: str = "slow"
    cue_lead: float = 3.0

    def __post_init__(self):
        _check(self.n_segments >= 1, "schedule.n_segments must be >= 1")
        _check(self.segment_duration > 0, "schedule.segment_duration must be positive")
        _check(self.first in ("slow", "fast"), "schedule.first must be 'slow' or 'fast'")
        _check(0 <= self.cue_lead < self.segment_duration, "schedule.cue_lead must be in [0, segment_duration)")


@dataclass(frozen=True)
class RunnersConfig:
    follow_robot: RunnerModelParams = DEFAULT_PARAMS[FOLLOW_ROBOT]
    wearable: RunnerModelParams = DEFAULT_PARAMS[WEARABLE]
    control: RunnerModelParams = DEFAULT_PARAMS[CONTROL]
    preferred_gap: float = 2.5
    population: PaceDistribution = field(default_factory=PaceDistribution)

    def __post_init__(self):
        _check(self.preferred_gap > 0, "runners.preferred_gap must be positive")
        for name in (FOLLOW_ROBOT, WEARABLE, CONTROL):
            _check(getattr(self, name).model == name, f"runners.{name}.model must be {name!r}")
        _check(0 < self.population.low < self.population.high, "runners.population needs 0 < low < high")

    def by_model(self) -> dict[str, RunnerModelParams]:
        return {FOLLOW_ROBOT: self.follow_robot, WEARABLE: self.wearable, CONTROL: self.control}


@dataclass(frozen=True)
class MetricsConfig:
    window: float = 5.0
    guard_band: float = 2.0

    def __post_init__(self):
        _check(self.window >= 2.0, "metrics.window must span at least 2 samples")
        _check(self.guard_band >= 0, "metrics.guard_band must be non-negative")


@dataclass(frozen=True)
class LapConfig:
    targets: tuple[float, ...] = (1.5, 2.0, 2.5)
    trials: int = 2
    duration: float = 30.0
    warmup: float = 3.0
    perception: str = "geometric"

    def __post_init__(self):
        _check(all(0 < v <= 2.6 for v in self.targets), "lap.targets must be in (0, 2.6]")
        _check(self.trials >= 1 and self.duration > 0 and self.warmup >= 0, "invalid lap timing")
        _check(self.perception in PERCEPTION_MODES, f"lap.perception must be one of {PERCEPTION_MODES}")


@dataclass(frozen=True)
class SessionConfig:
    condition: str = SNOOPIE
    natural_pace: float = 1.8
    perception: str = "vision"
    frame_dropout: float = 0.1
    dump_frames: int = 0

    def __post_init__(self):
        _check(self.condition in CONDITIONS, f"session.condition must be one of {CONDITIONS}")
        _check(0 < self.natural_pace <= 4.0, "session.natural_pace must be in (0, 4]")
        _check(self.perception in PERCEPTION_MODES, f"session.perception must be one of {PERCEPTION_MODES}")
        _check(0 <= self.frame_dropout < 1, "session.frame_dropout must be in [0, 1)")
        _check(self.dump_frames >= 0, "session.dump_frames must be non-negative")


@dataclass(frozen=True)
class StudyConfig:
    participants: int = 10
    perception: str = "geometric"
    frame_dropout: float = 0.1
    write_telemetry: bool = True

    def __post_init__(self):
        _check(self.participants >= 2, "study.participants must be >= 2")
        _check(self.perception in PERCEPTION_MODES, f"study.perception must be one of {PERCEPTION_MODES}")
        _check(0 <= self.frame_dropout < 1, "study.frame_dropout must be in [0, 1)")


@dataclass(frozen=True)
class ExtendedConfig:
    sessions: int = 5
    n_segments: int = 7
    segment_duration: float = 180.0
    natural_pace: float = 1.75
    pace_jitter: float = 0.15
    pace_drift: float = 0.0
    perception: str = "geometric"
    frame_dropout: float = 0.1

    def __post_init__(self):
        _check(self.sessions >= 1, "extended.sessions must be >= 1")
        _check(self.n_segments >= 6, "extended.n_segments must give at least 3 slow/fast pairs")
        _check(self.segment_duration > 0, "extended.segment_duration must be positive")
        _check(0 < self.natural_pace <= 4.0, "extended.natural_pace must be in (0, 4]")
        _check(self.pace_jitter >= 0, "extended.pace_jitter must be non-negative")
        _check(self.perception in PERCEPTION_MODES, f"extended.perception must be one of {PERCEPTION_MODES}")


@dataclass(frozen=True)
class ExperimentConfig:
    master_seed: int = 0
    output_dir: str = "runs"
    dt: float = 0.1
    track: TrackModel = field(default_factory=TrackModel)
    plant: PlantNoiseParams = field(default_factory=PlantNoiseParams)
    perception: PerceptionConfig = field(default_factory=PerceptionConfig)
    nav: NavGains = field(default_factory=NavGains)
    sensor: SensorConfig = field(default_factory=SensorConfig)
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)
    pacing: PacingConfig = field(default_factory=PacingConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    runners: RunnersConfig = field(default_factory=RunnersConfig)
    gps: GpsConfig = field(default_factory=GpsConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    lap: LapConfig = field(default_factory=LapConfig)
    session: SessionConfig = field(default_factory=SessionConfig)
    study: StudyConfig = field(default_factory=StudyConfig)
    extended: ExtendedConfig = field(default_factory=ExtendedConfig)

    def __post_init__(self):
        _check(0 < self.dt <= 0.5, "dt must be in (0, 0.5]")
        _check(self.master_seed >= 0, "master_seed must be non-negative")
        _check(self.gps.rate > 0 and self.gps.noise_std >= 0, "invalid gps settings")
        ticks = 1.0 / (self.gps.rate * self.dt)
        _check(abs(ticks - round(ticks)) < 1e-9, "gps sample period must be a whole number of ticks")
        _check(self.sensor.range_noise_std >= 0 and 0 <= self.sensor.drop_probability <= 1,
               "invalid runner sensor settings")
        _check(self.nav.max_missed >= 0 and 0 < self.nav.alpha <= 1, "invalid nav settings")

    def to_dict(self) -> dict:
        return _to_plain(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def digest(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        """Build from a possibly partial document; missing keys keep their defaults."""
        return _from_plain(cls, _merge(cls().to_dict(), data, ""), "")


def _to_plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, tuple):
        return [_to_plain(v) for v in obj]
    return obj


def _coerce(tp, value, path):
    origin = typing.get_origin(tp)
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected a table")
        return _from_plain(tp, value, path + ".")
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list")
        (inner, _) = typing.get_args(tp)
        return tuple(_coerce(inner, v, path) for v in value)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string")
        return value
    return value


def _from_plain(cls, data: dict, prefix: str):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(prefix + k for k in unknown)}")
    kwargs = {k: _coerce(hints[k], v, prefix + k) for k, v in data.items()}
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{prefix.rstrip('.') or 'config'}: {exc}") from exc


def parse_override(text: str) -> tuple[list[str], object]:
    """Split ``a.b.c=value``; the value is read as JSON, else kept as a string."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    key = key.strip()
    if not key:
        raise ConfigError(f"override {text!r} has an empty key")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.split("."), value


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    data = json.loads(json.dumps(data))
    for text in overrides:
        path, value = parse_override(text)
        node = data
        for part in path[:-1]:
            if part not in node or not isinstance(node[part], dict):
                raise ConfigError(f"unknown config key: {'.'.join(path)}")
            node = node[part]
        if path[-1] not in node:
            raise ConfigError(f"unknown config key: {'.'.join(path)}")
        node[path[-1]] = value
    return data


def load_config(path: str | None = None, overrides: list[str] | None = None,
                env: dict | None = None) -> ExperimentConfig:
    """Defaults, then the config file, then ``--set`` overrides, then the environment."""
    data = ExperimentConfig().to_dict()
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                doc = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}: {exc.msg}") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: top level must be a table")
        data = _merge(data, doc, "")
    data = apply_overrides(data, overrides or [])
    env = os.environ if env is None else env
    if env.get("PACERBOT_OUTPUT_DIR"):
        data["output_dir"] = env["PACERBOT_OUTPUT_DIR"]
    return ExperimentConfig.from_dict(data)


def _merge(base: dict, doc: dict, prefix: str) -> dict:
    out = dict(base)
    for k, v in doc.items():
        if k not in base:
            raise ConfigError(f"unknown config key: {prefix}{k}")
        if isinstance(base[k], dict) and isinstance(v, dict):
            out[k] = _merge(base[k], v, f"{prefix}{k}.")
        else:
            out[k] = v
    return out

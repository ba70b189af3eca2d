"""GPS-style runner tracking, speed estimation and pacing metrics."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .protocol import IntervalSchedule, PaceProfile


@dataclass(frozen=True)
class GpsConfig:
    rate: float = 1.0
    noise_std: float = 1.5


@dataclass
class TelemetryLog:
    t: list[float] = field(default_factory=list)
    x: list[float] = field(default_factory=list)
    y: list[float] = field(default_factory=list)
    rate: float = 1.0
    position_noise_std: float = 1.5

    def append(self, sample: tuple[float, float, float]) -> None:
        t, x, y = sample
        if self.t and t <= self.t[-1]:
            raise ValueError("telemetry timestamps must be strictly increasing")
        self.t.append(t)
        self.x.append(x)
        self.y.append(y)

    def __len__(self):
        return len(self.t)

    def arrays(self):
        return np.asarray(self.t, float), np.asarray(self.x, float), np.asarray(self.y, float)


def log_gps(position: tuple[float, float], t: float, cfg: GpsConfig,
            rng: np.random.Generator | None = None) -> tuple[float, float, float]:
    x, y = position
    if cfg.noise_std > 0:
        if rng is None:
            raise ValueError("a random generator is required for noisy GPS")
        nx, ny = rng.standard_normal(2)
        x += cfg.noise_std * nx
        y += cfg.noise_std * ny
    return t, x, y


def centered_moving_average(values: np.ndarray, width: int) -> np.ndarray:
    """Centered moving average; windows shrink symmetrically at the ends."""
    values = np.asarray(values, float)
    n = len(values)
    if width <= 1 or n == 0:
        return values.copy()
    h = width // 2
    csum = np.concatenate([np.zeros((1,) + values.shape[1:]), np.cumsum(values, axis=0)])
    idx = np.arange(n)
    k = np.minimum(np.minimum(idx, n - 1 - idx), h)
    lo = idx - k
    hi = idx + k + 1
    if values.ndim == 1:
        return (csum[hi] - csum[lo]) / (hi - lo)
    return (csum[hi] - csum[lo]) / (hi - lo)[:, None]


@dataclass
class SpeedSeries:
    t: np.ndarray
    speed: np.ndarray

    def __len__(self):
        return len(self.t)


def central_differences(t: np.ndarray, p: np.ndarray, half_span: int) -> np.ndarray:
    """Velocity at interior samples from ``(p[i+h] - p[i-h]) / (t[i+h] - t[i-h])``.

    ``h`` shrinks symmetrically near the ends so every difference stays
    centred on its sample; the first and last samples get no estimate.
    """
    n = len(t)
    idx = np.arange(1, n - 1)
    h = np.minimum(np.minimum(idx, n - 1 - idx), max(1, half_span))
    lo, hi = idx - h, idx + h
    return (p[hi] - p[lo]) / (t[hi] - t[lo])[:, None]


def estimate_speed(log: TelemetryLog, window: float = 5.0) -> SpeedSeries:
    """Smoothed speed at each interior sample.

    Velocity vectors come from central differences spanning the window and
    are then moving-averaged over the window before taking the magnitude,
    which keeps GPS scatter from inflating the speed. Each estimate is
    stamped at the midpoint of the fixes it differences, i.e. its own sample.
    """
    if len(log) < 3:
        return SpeedSeries(np.empty(0), np.empty(0))
    t, x, y = log.arrays()
    width = _window_samples(window, log.rate)
    vel = central_differences(t, np.column_stack([x, y]), width // 2)
    smooth = centered_moving_average(vel, width)
    return SpeedSeries(t[1:-1], np.hypot(smooth[:, 0], smooth[:, 1]))


def _window_samples(window: float, rate: float) -> int:
    """Odd sample count covering ``window`` seconds (at least 3)."""
    width = max(3, int(round(window * rate)))
    return width + 1 if width % 2 == 0 else width


@dataclass(frozen=True)
class IntervalMetrics:
    index: int
    label: str
    target: float
    n_samples: int
    mean_speed: float
    abs_error: float
    variance: float

    @property
    def valid(self) -> bool:
        return self.n_samples >= 2


def _interval_samples(speeds: SpeedSeries, schedule: IntervalSchedule, guard_band: float, t0: float):
    b = schedule.boundaries
    t = np.asarray(speeds.t) - t0
    for i, (label, _) in enumerate(schedule.segments):
        mask = (t >= b[i] + guard_band) & (t <= b[i + 1] - guard_band)
        yield i, label, np.asarray(speeds.speed)[mask]


def interval_metrics(speeds: SpeedSeries, schedule: IntervalSchedule, profile: PaceProfile,
                     guard_band: float = 2.0, t0: float = 0.0) -> list[IntervalMetrics]:
    out = []
    for i, label, v in _interval_samples(speeds, schedule, guard_band, t0):
        target = profile.speed(label)
        if v.size == 0:
            out.append(IntervalMetrics(i, label, target, 0, math.nan, math.nan, math.nan))
            continue
        var = float(np.var(v, ddof=1)) if v.size >= 2 else math.nan
        out.append(IntervalMetrics(i, label, target, int(v.size), float(v.mean()),
                                   float(np.mean(np.abs(v - target))), var))
    return out


def pace_error(speeds: SpeedSeries, schedule: IntervalSchedule, profile: PaceProfile,
               guard_band: float = 2.0, t0: float = 0.0) -> tuple[list[IntervalMetrics], float]:
    """Mean absolute deviation from target per interval, and its mean over intervals."""
    per = interval_metrics(speeds, schedule, profile, guard_band, t0)
    usable = [m.abs_error for m in per if m.n_samples > 0]
    return per, float(np.mean(usable)) if usable else math.nan


def pace_variance(speeds: SpeedSeries, schedule: IntervalSchedule, guard_band: float = 2.0,
                  t0: float = 0.0) -> tuple[list[float], float]:
    """Unbiased within-interval variance, and its mean over intervals."""
    per = []
    for _, _, v in _interval_samples(speeds, schedule, guard_band, t0):
        per.append(float(np.var(v, ddof=1)) if v.size >= 2 else math.nan)
    usable = [p for p in per if not math.isnan(p)]
    return per, float(np.mean(usable)) if usable else math.nan


def path_distance(log: TelemetryLog, window: float = 5.0) -> float:
    """Sum of chord lengths of the moving-average smoothed path."""
    if len(log) < 2:
        return 0.0
    t, x, y = log.arrays()
    width = _window_samples(window, log.rate)
    p = centered_moving_average(np.column_stack([x, y]), width)
    d = np.diff(p, axis=0)
    return float(np.sum(np.hypot(d[:, 0], d[:, 1])))


@dataclass
class MetricsReport:
    per_interval: list[IntervalMetrics]
    overall_error: float
    overall_variance: float
    distance_total: float
    duration_total: float

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["interval", "label", "target_mps", "n_samples", "mean_speed_mps", "abs_error_mps", "variance"])
        for m in self.per_interval:
            w.writerow([m.index, m.label, fmt(m.target), m.n_samples, fmt(m.mean_speed), fmt(m.abs_error),
                        fmt(m.variance)])
        w.writerow(["overall", "", "", sum(m.n_samples for m in self.per_interval), "",
                    fmt(self.overall_error), fmt(self.overall_variance)])
        return buf.getvalue()

    def to_text(self) -> str:
        lines = [f"{'#':>3} {'label':<5} {'target':>7} {'n':>4} {'mean':>7} {'error':>7} {'var':>8}"]
        for m in self.per_interval:
            lines.append(f"{m.index:>3} {m.label:<5} {m.target:>7.3f} {m.n_samples:>4} {m.mean_speed:>7.3f} "
                         f"{m.abs_error:>7.3f} {m.variance:>8.4f}")
        lines.append(f"overall error {self.overall_error:.4f} m/s, variance {self.overall_variance:.4f} (m/s)^2")
        lines.append(f"distance {self.distance_total:.1f} m over {self.duration_total:.1f} s")
        return "\n".join(lines) + "\n"


def fmt(value: float, digits: int = 6) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return ""
    return f"{value:.{digits}f}"


def session_summary(log: TelemetryLog, schedule: IntervalSchedule | None = None,
                    profile: PaceProfile | None = None, window: float = 5.0, guard_band: float = 2.0,
                    t0: float = 0.0) -> MetricsReport:
    """Distance, duration and per-interval metrics of one logged session.

    ``t0`` is the log time at which the schedule starts.
    """
    if len(log) == 0:
        raise ValueError("empty telemetry log")
    distance = path_distance(log, window)
    duration = log.t[-1] - log.t[0]
    if schedule is None or profile is None:
        return MetricsReport([], math.nan, math.nan, distance, duration)
    speeds = estimate_speed(log, window)
    per = interval_metrics(speeds, schedule, profile, guard_band, t0)
    errs = [m.abs_error for m in per if m.n_samples > 0]
    vars_ = [m.variance for m in per if m.valid]
    return MetricsReport(per, float(np.mean(errs)) if errs else math.nan,
                         float(np.mean(vars_)) if vars_ else math.nan, distance, duration)

"""Calibration, pace computation and interval scheduling."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .perception import RunnerMeasurement

SLOW = "slow"
FAST = "fast"


class CalibrationError(ValueError):
    """The calibration session is too short to yield a pace."""


class PaceTooSlowError(ValueError):
    """The recovery pace would fall below the walking floor."""


class SessionComplete(Exception):
    """Raised when a schedule is queried past its end."""


@dataclass
class CalibrationState:
    current_speed: float = 1.5
    prev_distance: float | None = None
    speed_history: list[tuple[float, float]] = field(default_factory=list)
    duration: float = 0.0
    u_min: float = 0.5
    u_max: float = 2.5

    def __post_init__(self):
        self.current_speed = min(max(self.current_speed, self.u_min), self.u_max)


def calibration_step(cal: CalibrationState, meas: RunnerMeasurement, dt: float,
                     k_cal: float = 0.05, deadband: float = 0.05) -> CalibrationState:
    """Adapt the robot's speed to the gap trend.

    A widening gap slows the robot, a narrowing gap speeds it up, at
    ``k_cal`` m/s per m/s of gap rate. ``prev_distance`` is the reference
    range and only moves when a change beyond ``deadband`` is acted on, so
    slow drifts accumulate until they register. The state is updated in place
    and returned.
    """
    if dt <= 0 or k_cal <= 0:
        raise ValueError("dt and k_cal must be positive")
    cal.speed_history.append((cal.duration, cal.current_speed))
    if meas.distance is not None:
        if cal.prev_distance is None:
            cal.prev_distance = meas.distance
        else:
            delta = meas.distance - cal.prev_distance
            if abs(delta) > deadband:
                speed = cal.current_speed - k_cal * delta / dt
                cal.current_speed = min(max(speed, cal.u_min), cal.u_max)
                cal.prev_distance = meas.distance
    cal.duration += dt
    return cal


def finalize_calibration(cal: CalibrationState, discard_fraction: float = 0.2,
                         min_duration: float = 10.0) -> float:
    """Time-weighted mean commanded speed over the tail of the session.

    The history (each command held until the session ends) is integrated
    with the trapezoid rule from ``discard_fraction`` of the session onward.
    """
    if cal.duration < min_duration or len(cal.speed_history) < 2:
        raise CalibrationError(f"calibration lasted {cal.duration:.1f} s, need at least {min_duration:.0f} s")
    t = np.array([p[0] for p in cal.speed_history])
    v = np.array([p[1] for p in cal.speed_history])
    if cal.duration > t[-1]:
        # The last command holds until the session ends.
        t = np.append(t, cal.duration)
        v = np.append(v, v[-1])
    t0 = t[0] + discard_fraction * (t[-1] - t[0])
    v0 = np.interp(t0, t, v)
    keep = t > t0
    tt = np.concatenate([[t0], t[keep]])
    vv = np.concatenate([[v0], v[keep]])
    return float(np.trapezoid(vv, tt) / (tt[-1] - tt[0]))


@dataclass(frozen=True)
class PaceProfile:
    u_bar: float
    u_slow: float
    u_fast: float
    delta_u: float = 0.5
    cap: float = 2.5

    def speed(self, label: str) -> float:
        return self.u_fast if label == FAST else self.u_slow


def compute_paces(u_bar: float, delta_u: float = 0.5, cap: float = 2.5, u_floor: float = 0.5) -> PaceProfile:
    u_slow = u_bar - delta_u
    if u_slow < u_floor:
        raise PaceTooSlowError(f"recovery pace {u_slow:.2f} m/s is below the {u_floor} m/s floor")
    u_fast = min(u_bar + delta_u, cap)
    if not u_slow < u_fast:
        raise PaceTooSlowError(f"recovery pace {u_slow:.2f} m/s is not below challenge pace {u_fast:.2f} m/s")
    return PaceProfile(u_bar, u_slow, u_fast, delta_u, cap)


@dataclass(frozen=True)
class IntervalSchedule:
    segments: tuple[tuple[str, float], ...]
    cue_lead: float = 3.0

    def __post_init__(self):
        if not self.segments:
            raise ValueError("schedule needs at least one segment")
        for i, (label, duration) in enumerate(self.segments):
            if label not in (SLOW, FAST):
                raise ValueError(f"unknown segment label {label!r}")
            if duration <= 0:
                raise ValueError("segment durations must be positive")
            if i and label == self.segments[i - 1][0]:
                raise ValueError("segment labels must alternate")

    @classmethod
    def alternating(cls, n_segments: int, duration: float, first: str = SLOW,
                    cue_lead: float = 3.0) -> "IntervalSchedule":
        other = FAST if first == SLOW else SLOW
        labels = [first if i % 2 == 0 else other for i in range(n_segments)]
        return cls(tuple((label, float(duration)) for label in labels), cue_lead)

    @property
    def boundaries(self) -> list[float]:
        """Segment start times plus the end time."""
        out = [0.0]
        for _, d in self.segments:
            out.append(out[-1] + d)
        return out

    @property
    def total_duration(self) -> float:
        return self.boundaries[-1]

    def segment_at(self, t: float) -> int:
        b = self.boundaries
        if t < 0:
            raise ValueError("negative schedule time")
        if t >= b[-1]:
            raise SessionComplete(t)
        for i in range(len(self.segments)):
            if t < b[i + 1]:
                return i
        raise SessionComplete(t)


@dataclass(frozen=True)
class Cue:
    """Announcement that segment ``next_index`` starts at ``at``."""

    t: float
    next_index: int
    next_label: str
    at: float


class IntervalRunner:
    """Stateful view of a schedule that emits each change cue exactly once."""

    def __init__(self, schedule: IntervalSchedule, profile: PaceProfile):
        self.schedule = schedule
        self.profile = profile
        self.cued: set[int] = set()
        self.cues: list[Cue] = []

    def target(self, t: float) -> tuple[float, int, Cue | None]:
        return schedule_target(self.schedule, self.profile, t, self.cued, self.cues)


def schedule_target(sched: IntervalSchedule, profile: PaceProfile, t: float,
                    cued: set[int] | None = None, log: list[Cue] | None = None):
    """Active target speed at ``t``, plus a change cue if one is due.

    ``cued`` records which transitions were already announced; pass the same
    set on every call to get once-per-transition cues.
    """
    idx = sched.segment_at(t)
    label = sched.segments[idx][0]
    cue = None
    nxt = idx + 1
    if nxt < len(sched.segments):
        change_at = sched.boundaries[nxt]
        if t >= change_at - sched.cue_lead and (cued is None or nxt not in cued):
            cue = Cue(t, nxt, sched.segments[nxt][0], change_at)
            if cued is not None:
                cued.add(nxt)
            if log is not None:
                log.append(cue)
    return profile.speed(label), idx, cue

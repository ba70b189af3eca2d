"""Closed-loop runs: robot lap trials, calibration and paced interval sessions.

Every run owns its random streams, derived from ``(master_seed, *keys)``
through :class:`numpy.random.SeedSequence`, so runs can be executed in any
order or in parallel and still reproduce exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import CONDITION_MODEL, SNOOPIE, ExperimentConfig
from .navigation import NavState, heading_command, smooth_observation, velocity_command
from .perception import (
    detect_lines,
    geometric_candidate,
    measure_runner,
    render_ground_patch,
    select_line,
    write_pgm,
)
from .protocol import (
    CalibrationState,
    IntervalRunner,
    IntervalSchedule,
    PaceProfile,
    calibration_step,
    finalize_calibration,
)
from .runners import FOLLOW_ROBOT, RunnerModelParams, RunnerObservation, RunnerState, runner_step
from .telemetry import TelemetryLog, log_gps
from .track import Plant, RobotState, VelocityCommand, lateral_offset, project_to_track, robot_at, track_point

# Stream identifiers for seed derivation.
STREAM_PLANT = 1
STREAM_PERCEPTION = 2
STREAM_RUNNER = 3
STREAM_SENSOR = 4
STREAM_GPS = 5
STREAM_PARTICIPANT = 6
CONDITION_CODES = {SNOOPIE: 0, "wearable": 1, "control": 2, "calibration": 3, "lap": 4}


def derive_rng(master_seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for one ``(master_seed, keys...)`` run."""
    return np.random.default_rng(np.random.SeedSequence([master_seed, *keys]))


class SessionAbort(RuntimeError):
    """A run could not be completed safely (lost line, invalid pace)."""


@dataclass
class ControlRecord:
    t: float
    offset: float
    angle: float
    yaw_rate: float
    target: float
    detected: bool
    true_offset: float
    speed: float
    x: float
    y: float


class RobotPacer:
    """The robot: perception, line-following controller and plant."""

    def __init__(self, cfg: ExperimentConfig, rngs: dict, perception: str = "vision",
                 frame_dropout: float = 0.0, state: RobotState | None = None, frame_dir=None,
                 dump_frames: int = 0):
        self.cfg = cfg
        self.track = cfg.track
        self.plant = Plant(cfg.plant, rngs["plant"])
        self.rng_perception = rngs["perception"]
        self.perception = perception
        self.frame_dropout = frame_dropout
        self.state = state if state is not None else robot_at(0.0, cfg.track)
        self.nav = NavState()
        self.progress = self._s()
        self._last_s = self.progress
        self.lost_ticks = 0
        self.frame_dir = frame_dir
        self.dump_frames = dump_frames
        self._frames = 0

    def _s(self) -> float:
        return project_to_track(self.state.x, self.state.y, self.track)

    def observe(self):
        rng = self.rng_perception
        if self.frame_dropout and rng.random() < self.frame_dropout:
            return None
        if self.perception == "geometric":
            p = self.cfg.perception
            return geometric_candidate(self.state, self.track, rng, p.geometric_offset_noise,
                                       p.geometric_angle_noise)
        img = render_ground_patch(self.state, self.track, self.cfg.perception.render, rng)
        if self.frame_dir is not None and self._frames < self.dump_frames:
            write_pgm(self.frame_dir / f"frame_{self._frames:05d}.pgm", img)
            self._frames += 1
        d = self.cfg.perception.detect
        return select_line(detect_lines(img, d), d.center_weight, d.vertical_weight)

    def tick(self, target: float, dt: float, steer: bool = True) -> ControlRecord:
        gains = self.cfg.nav
        candidate = self.observe() if steer else None
        self.nav = smooth_observation(self.nav, candidate, gains.alpha)
        yaw, self.nav, lost = heading_command(self.nav, gains, dt) if steer else (0.0, self.nav, False)
        if lost:
            self.lost_ticks += 1
            raise SessionAbort(f"line lost for more than {gains.max_missed} frames at t={self.state.t:.1f} s")
        cmd, _ = velocity_command(target, yaw)
        self.state = self.plant.step(self.state, cmd, dt)
        s = self._s()
        ds = (s - self._last_s) % self.track.perimeter
        if ds > self.track.perimeter / 2:
            ds -= self.track.perimeter
        self.progress += ds
        self._last_s = s
        return ControlRecord(self.state.t, self.nav.ema_offset, self.nav.ema_angle, yaw, target,
                             candidate is not None, lateral_offset(self.state, self.track), self.state.speed,
                             self.state.x, self.state.y)

    def stop(self):
        self.state = RobotState(self.state.x, self.state.y, self.state.theta, 0.0, self.state.t)


def run_streams(cfg: ExperimentConfig, *keys: int) -> dict:
    m = cfg.master_seed
    return {
        "plant": derive_rng(m, *keys, STREAM_PLANT),
        "perception": derive_rng(m, *keys, STREAM_PERCEPTION),
        "runner": derive_rng(m, *keys, STREAM_RUNNER),
        "sensor": derive_rng(m, *keys, STREAM_SENSOR),
        "gps": derive_rng(m, *keys, STREAM_GPS),
    }


# -- robot alone ---------------------------------------------------------------------------

@dataclass
class LapTrial:
    target: float
    trial: int
    records: list[ControlRecord]
    measured: np.ndarray

    @property
    def mean_abs_error(self) -> float:
        return abs(float(self.measured.mean()) - self.target)

    @property
    def variance(self) -> float:
        return float(np.var(self.measured, ddof=1))


def run_lap_trial(cfg: ExperimentConfig, target: float, trial: int, index: int) -> LapTrial:
    """Robot alone holding ``target``; the speed is measured after the warm-up."""
    lap = cfg.lap
    rngs = run_streams(cfg, CONDITION_CODES["lap"], index)
    pacer = RobotPacer(cfg, rngs, lap.perception, cfg.perception.frame_dropout)
    n_warm = int(round(lap.warmup / cfg.dt))
    n = n_warm + int(round(lap.duration / cfg.dt))
    records = [pacer.tick(target, cfg.dt) for _ in range(n)]
    measured = np.array([r.speed for r in records[n_warm:]])
    return LapTrial(target, trial, records, measured)


def run_full_lap(cfg: ExperimentConfig, target: float, index: int = 0, perception: str = "vision",
                 frame_dropout: float = 0.1) -> list[ControlRecord]:
    """Drive one complete lap of the followed line at ``target``."""
    rngs = run_streams(cfg, CONDITION_CODES["lap"], 1000 + index)
    pacer = RobotPacer(cfg, rngs, perception, frame_dropout, robot_at(0.0, cfg.track, speed=target))
    records = []
    while pacer.progress < cfg.track.perimeter:
        records.append(pacer.tick(target, cfg.dt))
    return records


# -- sessions with a runner ----------------------------------------------------------------

@dataclass
class SessionResult:
    condition: str
    log: TelemetryLog
    control: list[ControlRecord]
    runner_speed: list[tuple[float, float]]
    schedule_t0: float
    schedule: IntervalSchedule | None
    profile: PaceProfile | None
    targets: list[tuple[float, float, str]] = field(default_factory=list)
    cues: list = field(default_factory=list)
    calibration: CalibrationState | None = None
    u_bar: float | None = None


class World:
    """Shared clock, robot (optional), one runner and the GPS logger."""

    def __init__(self, cfg: ExperimentConfig, rngs: dict, runner_params: RunnerModelParams,
                 natural_pace: float, with_robot: bool, perception: str = "geometric",
                 frame_dropout: float = 0.0, frame_dir=None, dump_frames: int = 0):
        self.cfg = cfg
        self.dt = cfg.dt
        self.rngs = rngs
        self.params = runner_params
        gap = cfg.runners.preferred_gap
        self.robot = RobotPacer(cfg, rngs, perception, frame_dropout, frame_dir=frame_dir,
                                dump_frames=dump_frames) if with_robot else None
        start = self.robot.progress if self.robot else 0.0
        self.runner = RunnerState(s=start - gap, natural_pace=natural_pace, preferred_gap=gap)
        self.log = TelemetryLog(rate=cfg.gps.rate, position_noise_std=cfg.gps.noise_std)
        self.tick_count = 0
        self.gps_every = int(round(1.0 / (cfg.gps.rate * cfg.dt)))
        self.control: list[ControlRecord] = []
        self.runner_speed: list[tuple[float, float]] = []
        self.targets: list[tuple[float, float, str]] = []
        self._sample_gps()

    @property
    def t(self) -> float:
        return self.tick_count * self.dt

    def runner_xy(self) -> tuple[float, float]:
        x, y, _ = track_point(self.runner.s, self.cfg.track)
        return x, y

    def gap(self) -> float:
        rx, ry = self.runner_xy()
        st = self.robot.state
        return math.hypot(st.x - rx, st.y - ry)

    def _sample_gps(self):
        sample = log_gps(self.runner_xy(), round(self.t, 9), self.cfg.gps, self.rngs["gps"])
        self.log.append(sample)

    def step(self, robot_target: float | None, obs: RunnerObservation, label: str, target: float | None,
             steer: bool = True):
        if self.robot is not None and robot_target is not None:
            self.control.append(self.robot.tick(robot_target, self.dt, steer))
        runner_step(self.runner, self.params, obs, self.dt, self.rngs["runner"])
        self.tick_count += 1
        self.runner_speed.append((self.t, self.runner.speed))
        self.targets.append((self.t, target if target is not None else math.nan, label))
        if self.tick_count % self.gps_every == 0:
            self._sample_gps()

    def follow_obs(self, target=None) -> RunnerObservation:
        return RunnerObservation(target=target, gap=self.gap(), robot_speed=self.robot.state.speed)


def run_calibration_phase(world: World, cfg: ExperimentConfig) -> tuple[CalibrationState, float]:
    """Runner sets the pace; the robot adapts from the measured gap."""
    c = cfg.calibration
    cal = CalibrationState(current_speed=c.initial_speed, u_min=c.u_min, u_max=c.u_max)
    n = int(round(c.duration / cfg.dt))
    for _ in range(n):
        meas = measure_runner(world.robot.state, world.runner_xy(), cfg.sensor, world.rngs["sensor"])
        calibration_step(cal, meas, cfg.dt, c.k_cal, c.deadband)
        obs = RunnerObservation(gap=world.gap(), robot_speed=world.robot.state.speed, lead=True)
        world.step(cal.current_speed, obs, "calibration", cal.current_speed)
    return cal, finalize_calibration(cal, c.discard_fraction)


def run_pause(world: World, duration: float):
    """Standstill between phases; the runner regroups behind the robot."""
    n = int(round(duration / world.dt))
    for _ in range(n):
        obs = world.follow_obs() if world.robot is not None else RunnerObservation(target=0.0)
        world.step(0.0, RunnerObservation(target=0.0, gap=obs.gap, robot_speed=obs.robot_speed)
                   if world.robot is not None else obs, "pause", 0.0)
    if world.robot is not None:
        # Runner lines up at the preferred gap before the first interval.
        world.runner.s = world.robot.progress - world.cfg.runners.preferred_gap
        world.runner.base_speed = world.runner.speed = 0.0
        world.runner.delay_buffer.clear()


def run_intervals(world: World, schedule: IntervalSchedule, profile: PaceProfile, condition: str,
                  reaction_delay: float):
    """Interval phase: robot-led for ``snoopie``, announced targets otherwise."""
    runner = IntervalRunner(schedule, profile)
    t0 = world.t
    n = int(round(schedule.total_duration / world.dt))
    heard = []
    lag = int(round(reaction_delay / world.dt))
    for k in range(n):
        ts = k * world.dt
        target, idx, _ = runner.target(ts)
        label = schedule.segments[idx][0]
        if condition == SNOOPIE:
            world.step(target, world.follow_obs(), label, target)
        else:
            heard.append(target)
            obs = RunnerObservation(target=heard[max(0, len(heard) - 1 - lag)])
            world.step(None, obs, label, target)
    return t0, runner.cues


def build_schedule(cfg: ExperimentConfig, n_segments: int | None = None,
                   segment_duration: float | None = None) -> IntervalSchedule:
    s = cfg.schedule
    return IntervalSchedule.alternating(n_segments or s.n_segments, segment_duration or s.segment_duration,
                                        s.first, s.cue_lead)


def pace_profile(cfg: ExperimentConfig, u_bar: float) -> PaceProfile:
    from .protocol import PaceTooSlowError, compute_paces
    try:
        return compute_paces(u_bar, cfg.pacing.delta_u, cfg.pacing.cap, cfg.pacing.u_floor)
    except PaceTooSlowError as exc:
        raise SessionAbort(str(exc)) from exc


def run_calibration(cfg: ExperimentConfig, natural_pace: float, keys: tuple[int, ...],
                    params: RunnerModelParams | None = None) -> tuple[float, CalibrationState, World]:
    rngs = run_streams(cfg, *keys, CONDITION_CODES["calibration"])
    world = World(cfg, rngs, params or cfg.runners.follow_robot, natural_pace, True, "geometric",
                  cfg.perception.frame_dropout)
    cal, u_bar = run_calibration_phase(world, cfg)
    return u_bar, cal, world


def run_condition_session(cfg: ExperimentConfig, condition: str, profile: PaceProfile,
                          params: RunnerModelParams, natural_pace: float, keys: tuple[int, ...],
                          perception: str = "geometric", frame_dropout: float = 0.1,
                          schedule: IntervalSchedule | None = None, frame_dir=None,
                          dump_frames: int = 0) -> SessionResult:
    """One interval session for ``condition`` starting from rest."""
    schedule = schedule or build_schedule(cfg)
    rngs = run_streams(cfg, *keys, CONDITION_CODES[condition])
    if params.model != CONDITION_MODEL[condition]:
        raise ValueError(f"condition {condition!r} needs the {CONDITION_MODEL[condition]} runner model")
    world = World(cfg, rngs, params, natural_pace, condition == SNOOPIE, perception, frame_dropout,
                  frame_dir, dump_frames)
    t0, cues = run_intervals(world, schedule, profile, condition, params.reaction_delay)
    return SessionResult(condition, world.log, world.control, world.runner_speed, t0, schedule, profile,
                         world.targets, cues)


def run_full_session(cfg: ExperimentConfig, natural_pace: float, schedule: IntervalSchedule,
                     keys: tuple[int, ...], params: RunnerModelParams | None = None,
                     perception: str = "geometric", frame_dropout: float = 0.1, frame_dir=None,
                     dump_frames: int = 0) -> SessionResult:
    """Calibration, pause and robot-led intervals on one continuous timeline."""
    params = params or cfg.runners.follow_robot
    if params.model != FOLLOW_ROBOT:
        raise ValueError("a robot-led session needs the follow_robot runner model")
    rngs = run_streams(cfg, *keys, CONDITION_CODES[SNOOPIE])
    world = World(cfg, rngs, params, natural_pace, True, perception, frame_dropout, frame_dir, dump_frames)
    cal, u_bar = run_calibration_phase(world, cfg)
    profile = pace_profile(cfg, u_bar)
    run_pause(world, cfg.calibration.pause)
    t0, cues = run_intervals(world, schedule, profile, SNOOPIE, params.reaction_delay)
    return SessionResult(SNOOPIE, world.log, world.control, world.runner_speed, t0, schedule, profile,
                         world.targets, cues, cal, u_bar)

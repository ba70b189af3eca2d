"""Simulated runners for the three pacing conditions.

Runners move along the followed line (arc-length dynamics only). Each
runner's speed is a lagged "base" speed toward whatever the condition makes
them aim for, plus a mean-reverting fluctuation of std ``noise_std``.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

FOLLOW_ROBOT = "follow_robot"
WEARABLE = "wearable"
CONTROL = "control"
MODELS = (FOLLOW_ROBOT, WEARABLE, CONTROL)

RUNNER_SPEED_MAX = 4.0


@dataclass(frozen=True)
class RunnerModelParams:
    model: str = FOLLOW_ROBOT
    reaction_delay: float = 0.4
    noise_std: float = 0.08
    correction_gain: float = 0.8
    display_latency: float = 1.0
    drift_rate: float = 0.01
    seed: int = 0
    response_time: float = 0.5
    noise_time: float = 2.0
    gap_gain: float = 0.05
    quantum: float = 0.1
    memory_error_std: float = 0.0
    perception_time: float = 0.0
    check_interval: float = 0.0

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"unknown runner model {self.model!r}")
        for name in ("reaction_delay", "noise_std", "correction_gain", "display_latency",
                     "drift_rate", "noise_time", "gap_gain", "quantum", "memory_error_std",
                     "perception_time", "check_interval"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.response_time <= 0:
            raise ValueError("response_time must be positive")


DEFAULT_PARAMS = {
    FOLLOW_ROBOT: RunnerModelParams(FOLLOW_ROBOT, noise_std=0.08),
    WEARABLE: RunnerModelParams(WEARABLE, noise_std=0.22, memory_error_std=0.08, correction_gain=1.6,
                                check_interval=6.0),
    CONTROL: RunnerModelParams(CONTROL, noise_std=0.25, noise_time=4.0, memory_error_std=0.2),
}


@dataclass
class RunnerState:
    s: float = 0.0
    speed: float = 0.0
    natural_pace: float = 1.7
    preferred_gap: float = 2.5
    remembered_target: float | None = None
    base_speed: float = 0.0
    fluctuation: float = 0.0
    known_target: float | None = None
    perceived_speed: float | None = None
    since_check: float = 0.0
    delay_buffer: deque = field(default_factory=deque)

    def __post_init__(self):
        if self.preferred_gap <= 0:
            raise ValueError("preferred_gap must be positive")


@dataclass(frozen=True)
class RunnerObservation:
    """What the runner can perceive this tick.

    ``lead`` marks calibration, where the runner sets their own comfortable
    pace. ``gap`` and ``robot_speed`` are only meaningful with a robot.
    """

    target: float | None = None
    gap: float | None = None
    robot_speed: float | None = None
    lead: bool = False


def _delayed(buffer: deque, value, delay: float, dt: float):
    buffer.append(value)
    n = int(round(delay / dt))
    while len(buffer) > n + 1:
        buffer.popleft()
    return buffer[0]


def runner_step(state: RunnerState, params: RunnerModelParams, obs: RunnerObservation, dt: float,
                rng: np.random.Generator | None = None) -> RunnerState:
    """Advance a runner by ``dt``; updates ``state`` in place and returns it."""
    if dt <= 0:
        raise ValueError("dt must be positive")

    if obs.lead:
        aim = state.natural_pace
    elif params.model == FOLLOW_ROBOT:
        aim = _follow_aim(state, params, obs, dt)
    elif params.model == WEARABLE:
        aim = _wearable_aim(state, params, obs, dt, rng)
    else:
        aim = _control_aim(state, params, obs, dt, rng)

    aim = min(max(aim, 0.0), RUNNER_SPEED_MAX)
    beta = -math.expm1(-dt / params.response_time)
    state.base_speed += beta * (aim - state.base_speed)

    if params.noise_std > 0 and rng is not None and params.noise_time > 0:
        phi = math.exp(-dt / params.noise_time)
        state.fluctuation = phi * state.fluctuation + math.sqrt(1 - phi * phi) * params.noise_std * rng.standard_normal()
    # Fluctuations fade out as the runner comes to a stop.
    scale = min(1.0, state.base_speed / 0.5)
    state.speed = min(max(state.base_speed + scale * state.fluctuation, 0.0), RUNNER_SPEED_MAX)
    state.s += state.speed * dt
    return state


def _follow_aim(state, params, obs, dt):
    if obs.gap is None or obs.robot_speed is None:
        seen = state.delay_buffer[-1] if state.delay_buffer else (state.preferred_gap, state.base_speed)
    else:
        seen = (obs.gap, obs.robot_speed)
    gap, robot_speed = _delayed(state.delay_buffer, seen, params.reaction_delay, dt)
    # A person sees the robot's average motion, not its stride-level jitter.
    if state.perceived_speed is None or params.perception_time == 0:
        state.perceived_speed = robot_speed
    else:
        state.perceived_speed += -math.expm1(-dt / params.perception_time) * (robot_speed - state.perceived_speed)
    return state.perceived_speed + params.gap_gain * (gap - state.preferred_gap)


def _retarget(state, params, target, rng):
    """Runner hears a new target and forms an (imperfect) sense of it."""
    err = params.memory_error_std * rng.standard_normal() if (rng is not None and params.memory_error_std > 0) else 0.0
    state.known_target = target
    state.remembered_target = target * (1.0 + err)


def _wearable_aim(state, params, obs, dt, rng):
    if obs.target is not None and obs.target != state.known_target:
        _retarget(state, params, obs.target, rng)
    shown = _delayed(state.delay_buffer, state.speed, params.display_latency, dt)
    if state.known_target is None:
        return state.base_speed
    displayed = round(shown / params.quantum) * params.quantum if params.quantum > 0 else shown
    if params.check_interval <= 0:
        state.remembered_target += params.correction_gain * (state.known_target - displayed) * dt
    else:
        # Glance at the watch every so often and correct by the full gain;
        # gains above one overshoot.
        state.since_check += dt
        if state.since_check >= params.check_interval - 1e-9:
            state.since_check = 0.0
            state.remembered_target += params.correction_gain * (state.known_target - displayed)
    return state.remembered_target


def _control_aim(state, params, obs, dt, rng):
    if obs.target is not None and obs.target != state.known_target:
        _retarget(state, params, obs.target, rng)
    if state.remembered_target is None:
        return state.base_speed
    # Memory of an unfamiliar pace slides back toward what feels natural.
    state.remembered_target += params.drift_rate * (state.natural_pace - state.remembered_target) * dt
    return state.remembered_target


@dataclass(frozen=True)
class PaceDistribution:
    low: float = 1.2
    high: float = 2.2
    noise_scale_spread: float = 0.2
    delay_spread: float = 0.25


@dataclass(frozen=True)
class Participant:
    natural_pace: float
    params: dict
    condition_order: tuple[str, ...]


def spawn_participant(dist: PaceDistribution, rng: np.random.Generator,
                      base: dict | None = None, conditions: tuple[str, ...] = MODELS) -> Participant:
    """Draw one study participant, reused across all conditions.

    Noise levels and reaction delays get a shared per-person multiplicative
    scaling so that individual differences carry across conditions.
    """
    if not dist.low < dist.high:
        raise ValueError("pace distribution needs low < high")
    base = base or DEFAULT_PARAMS
    pace = float(rng.uniform(dist.low, dist.high))
    noise_scale = float(math.exp(dist.noise_scale_spread * rng.standard_normal()))
    delay_scale = float(math.exp(dist.delay_spread * rng.standard_normal()))
    seed = int(rng.integers(2 ** 31))
    params = {
        name: replace(p, noise_std=p.noise_std * noise_scale,
                      reaction_delay=p.reaction_delay * delay_scale, seed=seed)
        for name, p in base.items()
    }
    order = tuple(conditions[i] for i in rng.permutation(len(conditions)))
    return Participant(pace, params, order)

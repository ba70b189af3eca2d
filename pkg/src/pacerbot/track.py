"""Track geometry and the robot's kinematic plant.

World frame: the followed line starts at the datum ``(0, 0)`` heading +x and
runs counter-clockwise, so the infield is always on the left of travel.
Lane lines are parallel offset curves of the datum line, spaced
``lane_width`` apart and numbered outward from 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

FORWARD_SPEED_MAX = 2.6
DEFAULT_STRAIGHT = 84.39
# Keeps the lane-1 perimeter at 400 m exactly; the rounded 36.80 gives 400.0012.
DEFAULT_TURN_RADIUS = (400.0 - 2 * DEFAULT_STRAIGHT) / (2 * math.pi)


def wrap_angle(theta: float) -> float:
    """Normalize an angle to (-pi, pi]."""
    wrapped = math.remainder(theta, 2 * math.pi)
    if wrapped == -math.pi:
        return math.pi
    return wrapped


@dataclass(frozen=True)
class TrackModel:
    """Stadium-shaped running track.

    ``lane_index`` selects which line the robot follows: lane ``k`` follows
    line ``k - 1``, i.e. the inner boundary line of that lane.
    """

    straight_length: float = DEFAULT_STRAIGHT
    turn_radius: float = DEFAULT_TURN_RADIUS
    lane_width: float = 1.22
    line_width: float = 0.05
    lane_index: int = 1
    n_lines: int = 9

    def __post_init__(self):
        if self.straight_length <= 0 or self.turn_radius <= 0:
            raise ValueError("track dimensions must be positive")
        if self.line_width <= 0:
            raise ValueError("line_width must be positive")
        if self.lane_width <= self.line_width:
            raise ValueError("lane_width must exceed line_width")
        if self.lane_index < 1 or self.lane_index > self.n_lines:
            raise ValueError(f"lane_index must be in [1, {self.n_lines}]")

    @property
    def followed_offset(self) -> float:
        """Outward distance of the followed line from the datum line."""
        return (self.lane_index - 1) * self.lane_width

    @property
    def followed_radius(self) -> float:
        return self.turn_radius + self.followed_offset

    @property
    def perimeter(self) -> float:
        """Length of the followed line."""
        return 2 * self.straight_length + 2 * math.pi * self.followed_radius

    def line_offsets(self) -> np.ndarray:
        return np.arange(self.n_lines) * self.lane_width


def track_point(s: float, track: TrackModel) -> tuple[float, float, float]:
    """Point and forward tangent heading on the followed line at arc length ``s``."""
    L = track.straight_length
    R = track.turn_radius
    Rf = track.followed_radius
    a = track.followed_offset
    s = s % track.perimeter
    half_turn = math.pi * Rf
    if s < L:
        return s, -a, 0.0
    s -= L
    if s < half_turn:
        phi = -math.pi / 2 + s / Rf
        return L + Rf * math.cos(phi), R + Rf * math.sin(phi), wrap_angle(phi + math.pi / 2)
    s -= half_turn
    if s < L:
        return L - s, R + Rf, math.pi
    s -= L
    phi = math.pi / 2 + s / Rf
    return Rf * math.cos(phi), R + Rf * math.sin(phi), wrap_angle(phi + math.pi / 2)


def signed_distance(x, y, track: TrackModel):
    """Signed distance from the datum line, positive outward. Vectorized.

    The datum line is the boundary of all points within ``turn_radius`` of the
    segment joining the two turn centres, so its offset curves are exactly the
    level sets of this function.
    """
    L = track.straight_length
    R = track.turn_radius
    dx = x - np.minimum(np.maximum(x, 0.0), L)
    dy = y - R
    return np.sqrt(dx * dx + dy * dy) - R


def lateral_offset(state: "RobotState", track: TrackModel) -> float:
    """Signed perpendicular distance from the followed line; positive = left of travel."""
    d = float(signed_distance(state.x, state.y, track))
    return track.followed_offset - d


def project_to_track(x: float, y: float, track: TrackModel) -> float:
    """Arc length of the nearest point on the followed line, in [0, perimeter)."""
    L = track.straight_length
    R = track.turn_radius
    Rf = track.followed_radius
    if 0.0 <= x <= L:
        if y < R:
            return x
        return L + math.pi * Rf + (L - x)
    if x > L:
        phi = math.atan2(y - R, x - L)
        return L + Rf * (phi + math.pi / 2)
    phi = math.atan2(y - R, x) % (2 * math.pi)
    return (2 * L + math.pi * Rf + Rf * (phi - math.pi / 2)) % track.perimeter


def line_heading_at(x: float, y: float, track: TrackModel) -> float:
    """Tangent heading of the followed line at the point nearest ``(x, y)``."""
    return track_point(project_to_track(x, y, track), track)[2]


@dataclass(frozen=True)
class RobotState:
    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0
    speed: float = 0.0
    t: float = 0.0


@dataclass(frozen=True)
class VelocityCommand:
    forward: float = 0.0
    lateral: float = 0.0
    yaw_rate: float = 0.0


@dataclass(frozen=True)
class PlantNoiseParams:
    """Speed-tracking imperfection of the robot plant."""

    speed_response_time: float = 0.1
    speed_noise_std: float = 0.155
    yaw_rate_limit: float = 1.5
    seed: int = 0
    speed_scale_error: float = -0.013

    def __post_init__(self):
        if self.speed_response_time <= 0:
            raise ValueError("speed_response_time must be positive")
        if self.speed_noise_std < 0:
            raise ValueError("speed_noise_std must be non-negative")
        if self.yaw_rate_limit <= 0:
            raise ValueError("yaw_rate_limit must be positive")
        if not -0.5 < self.speed_scale_error < 0.5:
            raise ValueError("speed_scale_error must be in (-0.5, 0.5)")

    @property
    def speed_hard_max(self) -> float:
        return FORWARD_SPEED_MAX + 4 * self.speed_noise_std


@dataclass(frozen=True)
class StepReport:
    forward_clamped: bool = False
    yaw_clamped: bool = False


def step_plant(
    state: RobotState,
    cmd: VelocityCommand,
    dt: float,
    noise: PlantNoiseParams,
    rng: np.random.Generator | None = None,
) -> tuple[RobotState, StepReport]:
    """Advance the unicycle plant by one tick.

    Speed follows a first-order lag toward ``cmd.forward`` (scaled by the
    plant's systematic tracking error ``speed_scale_error``) with additive
    Gaussian noise; the pose integrates the new speed exactly along a constant
    curvature arc. ``rng`` is required whenever ``noise.speed_noise_std > 0``.
    """
    if not 0.0 < dt <= 0.5:
        raise ValueError(f"dt must be in (0, 0.5], got {dt}")

    forward = min(max(cmd.forward, 0.0), FORWARD_SPEED_MAX)
    yaw = min(max(cmd.yaw_rate, -noise.yaw_rate_limit), noise.yaw_rate_limit)
    report = StepReport(forward != cmd.forward, yaw != cmd.yaw_rate)

    if state.speed == 0.0 and forward == 0.0:
        return replace(state, t=state.t + dt), report

    beta = -math.expm1(-dt / noise.speed_response_time)
    speed = state.speed + beta * (forward * (1.0 + noise.speed_scale_error) - state.speed)
    if noise.speed_noise_std > 0:
        if rng is None:
            raise ValueError("a random generator is required when plant noise is on")
        speed += noise.speed_noise_std * rng.standard_normal()
    speed = min(max(speed, 0.0), noise.speed_hard_max)

    dtheta = yaw * dt
    dist = speed * dt
    if abs(dtheta) < 1e-9:
        mid = state.theta + 0.5 * dtheta
        x = state.x + dist * math.cos(mid)
        y = state.y + dist * math.sin(mid)
    else:
        r = dist / dtheta
        x = state.x + r * (math.sin(state.theta + dtheta) - math.sin(state.theta))
        y = state.y - r * (math.cos(state.theta + dtheta) - math.cos(state.theta))
    theta = wrap_angle(state.theta + dtheta)
    return RobotState(x, y, theta, speed, state.t + dt), report


class Plant:
    """Stateful wrapper owning the plant's random stream."""

    def __init__(self, noise: PlantNoiseParams, rng: np.random.Generator | None = None):
        self.noise = noise
        self.rng = rng if rng is not None else np.random.default_rng(noise.seed)
        self.clamp_events = 0

    def step(self, state: RobotState, cmd: VelocityCommand, dt: float) -> RobotState:
        new, report = step_plant(state, cmd, dt, self.noise, self.rng)
        if report.forward_clamped:
            self.clamp_events += 1
        return new


def robot_at(s: float, track: TrackModel, offset: float = 0.0, heading_error: float = 0.0,
             speed: float = 0.0, t: float = 0.0) -> RobotState:
    """Robot pose at arc length ``s`` displaced ``offset`` to the left of the line."""
    x, y, heading = track_point(s, track)
    return RobotState(
        x - offset * math.sin(heading),
        y + offset * math.cos(heading),
        wrap_angle(heading + heading_error),
        speed,
        t,
    )

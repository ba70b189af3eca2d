"""Line-following controller: smoothed line observations to velocity commands."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .perception import LineCandidate
from .track import FORWARD_SPEED_MAX, VelocityCommand


@dataclass(frozen=True)
class NavGains:
    kp: float = 1.2
    ki: float = 0.0
    kd: float = 0.4
    lookahead: float = 1.0
    alpha: float = 0.3
    max_missed: int = 15
    yaw_rate_limit: float = 1.5


@dataclass(frozen=True)
class NavState:
    ema_offset: float = 0.0
    ema_angle: float = 0.0
    frames_since_detection: int = 0
    integral_term: float = 0.0
    last_error: float | None = None


class LostLineError(RuntimeError):
    """Raised by the supervisor when the followed line has been missing too long."""


def smooth_observation(nav: NavState, candidate: LineCandidate | None, alpha: float) -> NavState:
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must be in (0, 1], got {alpha}")
    if candidate is None:
        return replace(nav, frames_since_detection=nav.frames_since_detection + 1)
    return replace(
        nav,
        ema_offset=alpha * candidate.offset_m + (1 - alpha) * nav.ema_offset,
        ema_angle=alpha * candidate.angle_from_vertical + (1 - alpha) * nav.ema_angle,
        frames_since_detection=0,
    )


def tracking_error(nav: NavState, lookahead: float) -> float:
    """Projected displacement from the line ``lookahead`` metres ahead."""
    return nav.ema_offset + lookahead * math.tan(nav.ema_angle)


def heading_command(nav: NavState, gains: NavGains, dt: float) -> tuple[float, NavState, bool]:
    """PID steering on the smoothed tracking error.

    Returns ``(yaw_rate, new_state, lost)``. A positive error (robot left of
    the line) yields a negative, i.e. rightward, yaw rate.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if nav.frames_since_detection > gains.max_missed:
        return 0.0, nav, True

    e = tracking_error(nav, gains.lookahead)
    integral = nav.integral_term + e * dt
    de = 0.0 if nav.last_error is None else (e - nav.last_error) / dt
    u = gains.kp * e + gains.ki * integral + gains.kd * de
    yaw = max(-gains.yaw_rate_limit, min(gains.yaw_rate_limit, -u))
    return yaw, replace(nav, integral_term=integral, last_error=e), False


def velocity_command(target_speed: float, yaw_rate: float) -> tuple[VelocityCommand, bool]:
    """Combine the pacing speed with the steering output; flags out-of-range speeds."""
    forward = min(max(target_speed, 0.0), FORWARD_SPEED_MAX)
    return VelocityCommand(forward, 0.0, yaw_rate), forward != target_speed

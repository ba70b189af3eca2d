"""Synthetic ground imagery, track-line detection and runner ranging.

Images are rectified top-down patches in the robot frame. Row 0 is the far
edge of the patch; columns increase to the robot's right. A line candidate's
``angle_from_vertical`` is positive when the line leans right with distance
ahead, and ``offset_m`` is the robot's displacement from the line at the
robot's own row (positive = robot left of the line), so it reads on the same
scale as :func:`pacerbot.track.lateral_offset`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .track import RobotState, TrackModel, lateral_offset, line_heading_at, signed_distance, wrap_angle

_EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class RenderConfig:
    width_m: float = 4.0
    depth_m: float = 6.0
    near_m: float = 0.0
    resolution: float = 0.02
    line_brightness: float = 0.9
    background_brightness: float = 0.35
    pixel_noise_std: float = 0.05
    occlusion_patches: int = 0
    occlusion_size_m: float = 0.4

    @property
    def shape(self) -> tuple[int, int]:
        return int(round(self.depth_m / self.resolution)), int(round(self.width_m / self.resolution))


@dataclass(frozen=True)
class DetectConfig:
    window: int = 31
    offset: float = 0.08
    min_component_size: int = 40
    center_weight: float = 0.5
    vertical_weight: float = 0.5


@dataclass(frozen=True)
class SensorConfig:
    range_noise_std: float = 0.05
    drop_probability: float = 0.05


@dataclass
class GroundImage:
    """``origin`` is the (forward, left) robot-frame position of pixel (0, 0)'s centre."""

    intensity: np.ndarray
    resolution: float
    origin: tuple[float, float]

    @property
    def height(self) -> int:
        return self.intensity.shape[0]

    @property
    def width(self) -> int:
        return self.intensity.shape[1]

    def ground_coords(self, rows, cols):
        """Robot-frame (forward, left) coordinates of pixel centres."""
        forward = self.origin[0] - np.asarray(rows) * self.resolution
        left = self.origin[1] - np.asarray(cols) * self.resolution
        return forward, left


@dataclass(frozen=True)
class LineCandidate:
    centroid_col_norm: float
    angle_from_vertical: float
    pixel_count: int
    offset_m: float


@dataclass(frozen=True)
class RunnerMeasurement:
    distance: float | None
    t: float


def _pixel_world(robot: RobotState, img: GroundImage):
    rows = np.arange(img.height)[:, None]
    cols = np.arange(img.width)[None, :]
    forward, left = img.ground_coords(rows, cols)
    c, s = math.cos(robot.theta), math.sin(robot.theta)
    wx = robot.x + forward * c - left * s
    wy = robot.y + forward * s + left * c
    return wx, wy


def line_membership(robot: RobotState, track: TrackModel, img: GroundImage) -> np.ndarray:
    """Boolean mask of pixels whose ground point lies on a painted line."""
    wx, wy = _pixel_world(robot, img)
    d = signed_distance(wx, wy, track)
    j = np.clip(np.rint(d / track.lane_width), 0, track.n_lines - 1)
    return np.abs(d - j * track.lane_width) <= track.line_width / 2


def render_ground_patch(robot: RobotState, track: TrackModel, cfg: RenderConfig = RenderConfig(),
                        rng: np.random.Generator | None = None) -> GroundImage:
    """Render the patch of ground ahead of the robot.

    Pixel noise and occlusion patches need ``rng``; without one they are skipped.
    """
    h, w = cfg.shape
    res = cfg.resolution
    origin = (cfg.near_m + (h - 0.5) * res, (w / 2 - 0.5) * res)
    img = GroundImage(np.empty((h, w)), res, origin)
    on_line = line_membership(robot, track, img)
    intensity = np.where(on_line, cfg.line_brightness, cfg.background_brightness)

    if rng is not None:
        if cfg.occlusion_patches:
            size = max(1, int(round(cfg.occlusion_size_m / res)))
            for _ in range(cfg.occlusion_patches):
                r0 = int(rng.integers(0, max(1, h - size)))
                c0 = int(rng.integers(0, max(1, w - size)))
                intensity[r0:r0 + size, c0:c0 + size] = cfg.background_brightness
        if cfg.pixel_noise_std > 0:
            intensity = intensity + cfg.pixel_noise_std * rng.standard_normal((h, w), dtype=np.float32)
    img.intensity = np.clip(intensity, 0.0, 1.0)
    return img


def adaptive_threshold(intensity: np.ndarray, window: int, offset: float) -> np.ndarray:
    local_mean = ndimage.uniform_filter(intensity, size=window, mode="nearest")
    return intensity > local_mean + offset


def axis_angle(var_r: float, var_c: float, cov_rc: float) -> float:
    """Orientation of the major axis of a pixel cluster's second moments.

    Measured from the image vertical toward increasing columns, in (-pi/2, pi/2].
    """
    # Up the image (decreasing row) is forward, so cov(right, up) = -cov_rc.
    cov = np.array([[var_c, -cov_rc], [-cov_rc, var_r]])
    vals, vecs = np.linalg.eigh(cov)
    right, up = vecs[:, np.argmax(vals)]
    angle = math.atan2(right, up)
    if angle > math.pi / 2:
        angle -= math.pi
    elif angle <= -math.pi / 2:
        angle += math.pi
    return angle


def principal_axis(rows: np.ndarray, cols: np.ndarray) -> tuple[float, float, float]:
    """Centroid ``(row, col)`` and major-axis angle of a pixel cluster."""
    rows = np.asarray(rows, dtype=float)
    cols = np.asarray(cols, dtype=float)
    r_c, c_c = rows.mean(), cols.mean()
    dr, dc = rows - r_c, cols - c_c
    return float(r_c), float(c_c), axis_angle(np.mean(dr * dr), np.mean(dc * dc), np.mean(dr * dc))


def detect_lines(img: GroundImage, cfg: DetectConfig = DetectConfig()) -> list[LineCandidate]:
    mask = adaptive_threshold(img.intensity, cfg.window, cfg.offset)
    labels, n = ndimage.label(mask, structure=_EIGHT_CONNECTED)
    if n == 0:
        return []
    rows, cols = np.nonzero(labels)
    member = labels[rows, cols]
    count = np.bincount(member, minlength=n + 1).astype(float)
    keep = np.flatnonzero(count >= cfg.min_component_size)
    keep = keep[keep > 0]
    if keep.size == 0:
        return []

    def moment(w):
        return np.bincount(member, weights=w, minlength=n + 1)[keep]

    rows = rows.astype(float)
    cols = cols.astype(float)
    cnt = count[keep]
    r_c = moment(rows) / cnt
    c_c = moment(cols) / cnt
    var_r = moment(rows * rows) / cnt - r_c ** 2
    var_c = moment(cols * cols) / cnt - c_c ** 2
    cov_rc = moment(rows * cols) / cnt - r_c * c_c

    half = (img.width - 1) / 2
    candidates = []
    for i in range(keep.size):
        angle = axis_angle(var_r[i], var_c[i], cov_rc[i])
        forward_c, left_c = img.ground_coords(r_c[i], c_c[i])
        if abs(angle) > math.radians(85):
            # Near-horizontal blob: no usable intercept with the robot row.
            offset = float(-left_c)
        else:
            offset = float(-left_c - forward_c * math.tan(angle))
        candidates.append(LineCandidate(
            centroid_col_norm=float((c_c[i] - half) / half),
            angle_from_vertical=angle,
            pixel_count=int(cnt[i]),
            offset_m=offset,
        ))
    candidates.sort(key=lambda c: c.centroid_col_norm)
    return candidates


def selection_score(c: LineCandidate, center_weight: float = 0.5, vertical_weight: float = 0.5) -> float:
    return center_weight * abs(c.centroid_col_norm) + vertical_weight * abs(c.angle_from_vertical) / (math.pi / 2)


def select_line(candidates: list[LineCandidate], center_weight: float = 0.5,
                vertical_weight: float = 0.5) -> LineCandidate | None:
    """Pick the candidate that is most centred and most vertical."""
    if not candidates:
        return None
    return min(candidates, key=lambda c: (selection_score(c, center_weight, vertical_weight),
                                          -c.pixel_count, abs(c.centroid_col_norm)))


def geometric_candidate(robot: RobotState, track: TrackModel, rng: np.random.Generator | None = None,
                        offset_noise_std: float = 0.0, angle_noise_std: float = 0.0,
                        half_width_m: float = 2.0) -> LineCandidate:
    """Candidate for the followed line computed from ground truth.

    Fast stand-in for render + detect when only the closed loop matters.
    """
    offset = lateral_offset(robot, track)
    angle = wrap_angle(robot.theta - line_heading_at(robot.x, robot.y, track))
    if rng is not None:
        if offset_noise_std > 0:
            offset += offset_noise_std * rng.standard_normal()
        if angle_noise_std > 0:
            angle += angle_noise_std * rng.standard_normal()
    col = max(-1.0, min(1.0, offset / half_width_m))
    return LineCandidate(col, angle, 0, offset)


def measure_runner(robot: RobotState, runner_xy: tuple[float, float], cfg: SensorConfig,
                   rng: np.random.Generator) -> RunnerMeasurement:
    if cfg.drop_probability > 0 and rng.random() < cfg.drop_probability:
        return RunnerMeasurement(None, robot.t)
    d = math.hypot(runner_xy[0] - robot.x, runner_xy[1] - robot.y)
    if cfg.range_noise_std > 0:
        d += cfg.range_noise_std * rng.standard_normal()
    return RunnerMeasurement(max(d, 1e-3), robot.t)


def write_pgm(path, img: GroundImage) -> None:
    """Dump an image as a binary portable graymap (P5)."""
    data = np.clip(np.rint(img.intensity * 255), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.width} {img.height}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM file")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    return np.frombuffer(parts[4][:w * h], dtype=np.uint8).reshape(h, w) / maxval

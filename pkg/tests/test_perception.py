import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import on_any_line, pixel_ground_point
from pacerbot.perception import (
    DetectConfig,
    GroundImage,
    LineCandidate,
    RenderConfig,
    SensorConfig,
    axis_angle,
    detect_lines,
    line_membership,
    measure_runner,
    principal_axis,
    read_pgm,
    render_ground_patch,
    select_line,
    selection_score,
    write_pgm,
)
from pacerbot.track import RobotState, TrackModel, lateral_offset, robot_at

TRACK = TrackModel()
CLEAN = RenderConfig(pixel_noise_std=0.0)
BG, FG = 0.35, 0.9


def blank(h=300, w=200):
    return GroundImage(np.full((h, w), BG), 0.02, ((h - 0.5) * 0.02, (w / 2 - 0.5) * 0.02))


def stripe_image(cols):
    img = blank()
    for c in cols:
        img.intensity[:, c:c + 3] = FG
    return img


def rotated_stripe(angle, length=200, width=3.0, h=300, w=200):
    """Rectangle through the image centre leaning ``angle`` to the right going up."""
    img = blank(h, w)
    rr, cc = np.mgrid[0:h, 0:w]
    up = (h - 1) / 2 - rr
    right = cc - (w - 1) / 2
    along = up * math.cos(angle) + right * math.sin(angle)
    across = -up * math.sin(angle) + right * math.cos(angle)
    img.intensity[(np.abs(along) <= length / 2) & (np.abs(across) <= width / 2)] = FG
    return img


def stripe_centres(img, lo=60, hi=140):
    on = img.intensity[:, lo:hi] > (BG + FG) / 2
    cols = np.arange(lo, hi)
    return np.array([cols[row].mean() for row in on if row.any()])


# -- rendering ------------------------------------------------------------------------

def test_render_shape_and_range():
    img = render_ground_patch(robot_at(10, TRACK), TRACK, RenderConfig(), np.random.default_rng(0))
    assert img.intensity.shape == (300, 200)
    assert img.intensity.min() >= 0 and img.intensity.max() <= 1


def test_centred_stripe():
    img = render_ground_patch(robot_at(20.0, TRACK), TRACK, CLEAN)
    centres = stripe_centres(img)
    assert len(centres) == 300
    assert np.all(np.abs(centres - 99.5) <= 1.0)


def test_offset_shifts_stripe_by_offset_over_resolution():
    img = render_ground_patch(robot_at(20.0, TRACK, offset=0.30), TRACK, CLEAN)
    centres = stripe_centres(img, 80, 150)
    # Robot 0.30 m left of the line: the line appears 15 px right of centre.
    assert np.all(np.abs(centres - (99.5 + 15)) <= 1.0)


def test_rendering_matches_membership_oracle_random_pixels():
    rng = np.random.default_rng(7)
    robot = robot_at(90.0, TRACK, offset=0.4, heading_error=0.2)
    img = render_ground_patch(robot, TRACK, CLEAN)
    rows = rng.integers(0, 300, 1000)
    cols = rng.integers(0, 200, 1000)
    for r, c in zip(rows, cols):
        x, y = pixel_ground_point(robot, r, c, (300, 200), 0.02)
        expected = FG if on_any_line(x, y, TRACK) else BG
        assert img.intensity[r, c] == expected


def test_occlusion_patches_only_darken():
    robot = robot_at(20.0, TRACK)
    clean = render_ground_patch(robot, TRACK, CLEAN)
    occ = render_ground_patch(robot, TRACK, RenderConfig(pixel_noise_std=0.0, occlusion_patches=3),
                              np.random.default_rng(1))
    assert np.all(occ.intensity <= clean.intensity)
    assert occ.intensity.sum() <= clean.intensity.sum()


def test_membership_blank_far_from_track():
    stray = RobotState(42.0, 18.0, 0.0, 0.0, 0.0)  # middle of the infield
    img = render_ground_patch(stray, TRACK, CLEAN)
    assert not line_membership(stray, TRACK, img).any()


# -- detection ------------------------------------------------------------------------

def test_single_vertical_stripe():
    cands = detect_lines(stripe_image([120]))
    assert len(cands) == 1
    c = cands[0]
    assert abs(c.angle_from_vertical) < 0.02
    assert c.centroid_col_norm == pytest.approx((121 - 99.5) / 99.5, abs=1e-9)
    assert c.pixel_count == 900


def test_two_parallel_stripes_ordered():
    cands = detect_lines(stripe_image([80, 110]))
    assert len(cands) == 2
    assert cands[0].centroid_col_norm < cands[1].centroid_col_norm
    gap_px = (cands[1].centroid_col_norm - cands[0].centroid_col_norm) * 99.5
    assert gap_px == pytest.approx(30, abs=1e-9)


def test_uniform_image_has_no_lines():
    assert detect_lines(blank()) == []


def test_small_blobs_rejected():
    img = blank()
    img.intensity[100:105, 100:105] = FG  # 25 px, below the 40 px minimum
    assert detect_lines(img) == []


def test_rotated_stripe_angle():
    cands = detect_lines(rotated_stripe(math.radians(20)))
    assert len(cands) == 1
    assert cands[0].angle_from_vertical == pytest.approx(0.349, abs=0.03)
    cands = detect_lines(rotated_stripe(-math.radians(20)))
    assert cands[0].angle_from_vertical == pytest.approx(-0.349, abs=0.03)


@pytest.mark.parametrize("theta", [0.0, 0.1, math.radians(20), -0.7, 1.2])
def test_axis_angle_matches_rectangle_moments(theta):
    # A solid rectangle of length l, width w has second moments l^2/12 along and
    # w^2/12 across its axis. Rotating to image axes (up = -row, right = col):
    l, w = 120.0, 4.0
    a, b = l * l / 12, w * w / 12
    s, c = math.sin(theta), math.cos(theta)
    var_right = a * s * s + b * c * c
    var_up = a * c * c + b * s * s
    cov_right_up = (a - b) * s * c
    assert axis_angle(var_up, var_right, -cov_right_up) == pytest.approx(theta, abs=1e-12)


def test_principal_axis_of_pixel_cluster():
    img = rotated_stripe(math.radians(20), width=5)
    rows, cols = np.nonzero(img.intensity > 0.5)
    r, c, ang = principal_axis(rows, cols)
    assert (r, c) == (pytest.approx(149.5, abs=0.5), pytest.approx(99.5, abs=0.5))
    assert ang == pytest.approx(math.radians(20), abs=0.01)


@given(st.integers(-40, 40))
def test_detection_translation_covariant(k):
    base = detect_lines(stripe_image([100]))[0]
    moved = detect_lines(stripe_image([100 + k]))[0]
    assert abs((moved.centroid_col_norm - base.centroid_col_norm) * 99.5 - k) <= 1


def test_threshold_survives_brightness_gradient():
    img = stripe_image([100])
    ramp = np.linspace(0.8, 1.0, 300)[:, None]  # 20% brightness change down the image
    img.intensity = img.intensity * ramp
    cands = detect_lines(img)
    assert len(cands) == 1 and abs(cands[0].angle_from_vertical) < 0.02


@given(st.floats(-0.3, 0.3), st.floats(-0.1, 0.1), st.floats(5, 78))
def test_closed_loop_offset_recovery_on_straights(offset, heading, s):
    robot = robot_at(s, TRACK, offset=offset, heading_error=heading)
    best = select_line(detect_lines(render_ground_patch(robot, TRACK, CLEAN)))
    assert best is not None
    assert abs(best.offset_m - lateral_offset(robot, TRACK)) < 2 * CLEAN.resolution


@given(st.floats(-0.6, 0.6), st.floats(-0.2, 0.2), st.floats(5, 78))
def test_followed_line_candidate_always_recovered(offset, heading, s):
    robot = robot_at(s, TRACK, offset=offset, heading_error=heading)
    cands = detect_lines(render_ground_patch(robot, TRACK, CLEAN))
    truth = lateral_offset(robot, TRACK)
    assert min(abs(c.offset_m - truth) for c in cands) < 2 * CLEAN.resolution


def test_selection_can_prefer_neighbour_when_yawed_away():
    # Robot 0.45 m right of its line and yawed further right: 3 m ahead the
    # followed line sits left of centre while the next line out is nearer the
    # middle, so the centred-and-vertical rule picks the neighbour.
    robot = robot_at(30.0, TRACK, offset=-0.45, heading_error=-0.09)
    cands = detect_lines(render_ground_patch(robot, TRACK, CLEAN))
    best = select_line(cands)
    assert abs(best.offset_m - (-0.45 + TRACK.lane_width)) < 0.04
    assert min(abs(c.offset_m + 0.45) for c in cands) < 0.04


def test_noisy_render_still_detects_followed_line():
    rng = np.random.default_rng(3)
    for s in (10.0, 50.0, 210.0, 250.0):
        robot = robot_at(s, TRACK, offset=0.1)
        best = select_line(detect_lines(render_ground_patch(robot, TRACK, RenderConfig(), rng)))
        assert abs(best.offset_m - 0.1) < 0.05


def test_curve_offset_bias_is_sagitta_of_blob_centroid():
    # The straight-axis fit extrapolates the tangent at the blob centroid back to
    # the robot row, so on a turn it overstates the offset by about d^2 / (2 r),
    # with d the centroid distance ahead (3 m) and r the line radius.
    robot = robot_at(120.0, TRACK, offset=0.1)
    best = select_line(detect_lines(render_ground_patch(robot, TRACK, CLEAN)))
    r = TRACK.turn_radius + 0.1
    assert best.offset_m - 0.1 == pytest.approx(3.0 ** 2 / (2 * r), rel=0.35)


# -- selection ------------------------------------------------------------------------

def test_select_single_and_empty():
    c = LineCandidate(0.3, 0.1, 100, 0.0)
    assert select_line([c]) is c
    assert select_line([]) is None


def test_centred_tilted_beats_offcentre_vertical():
    tilted = LineCandidate(0.0, 0.4, 100, 0.0)
    offset = LineCandidate(0.5, 0.0, 100, 0.0)
    assert selection_score(tilted) == pytest.approx(0.1273, abs=1e-4)
    assert selection_score(offset) == pytest.approx(0.25, abs=1e-12)
    assert select_line([offset, tilted]) is tilted


def test_tie_break_by_pixel_count_then_centre():
    small = LineCandidate(0.2, 0.0, 50, 0.0)
    big = LineCandidate(0.2, 0.0, 500, 0.0)
    assert select_line([small, big]) is big
    assert select_line([big, small]) is big


@given(st.lists(st.tuples(st.floats(-1, 1), st.floats(-1.5, 1.5)), min_size=1, max_size=6),
       st.integers(40, 10_000))
def test_selection_depends_only_on_geometry(geoms, scale):
    a = [LineCandidate(c, ang, 100, 0.0) for c, ang in geoms]
    b = [LineCandidate(c, ang, 100 * scale, 0.0) for c, ang in geoms]
    assert a.index(select_line(a)) == b.index(select_line(b))


# -- runner ranging -------------------------------------------------------------------

def test_measure_runner_noise_free():
    m = measure_runner(RobotState(), (-3.0, 0.0), SensorConfig(0.0, 0.0), np.random.default_rng(0))
    assert m.distance == pytest.approx(3.0)


def test_measure_runner_always_dropped():
    rng = np.random.default_rng(0)
    assert all(measure_runner(RobotState(), (1, 1), SensorConfig(0.05, 1.0), rng).distance is None
               for _ in range(100))


def test_measure_runner_drop_fraction():
    rng = np.random.default_rng(11)
    cfg = SensorConfig(0.05, 0.1)
    absent = sum(measure_runner(RobotState(), (-3, 0), cfg, rng).distance is None for _ in range(10_000))
    assert abs(absent / 10_000 - 0.10) <= 0.01


def test_measured_distance_positive():
    rng = np.random.default_rng(0)
    cfg = SensorConfig(1.0, 0.0)
    assert all(measure_runner(RobotState(), (0.01, 0), cfg, rng).distance > 0 for _ in range(200))


def test_pgm_round_trip(tmp_path):
    img = render_ground_patch(robot_at(5, TRACK), TRACK, RenderConfig(), np.random.default_rng(0))
    path = tmp_path / "f.pgm"
    write_pgm(path, img)
    back = read_pgm(path)
    assert back.shape == img.intensity.shape
    assert np.max(np.abs(back - img.intensity)) <= 0.5 / 255 + 1e-12
    assert path.read_bytes().startswith(b"P5\n200 300\n255\n")

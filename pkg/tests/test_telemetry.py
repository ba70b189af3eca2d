import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pacerbot.config import ExperimentConfig
from pacerbot.protocol import FAST, SLOW, IntervalSchedule, compute_paces
from pacerbot.simulation import run_calibration
from pacerbot.telemetry import (
    GpsConfig,
    SpeedSeries,
    TelemetryLog,
    centered_moving_average,
    estimate_speed,
    log_gps,
    pace_error,
    pace_variance,
    path_distance,
    session_summary,
)


def make_log(points, rate=1.0, start=0.0):
    log = TelemetryLog(rate=rate)
    for i, (x, y) in enumerate(points):
        log.append((start + i / rate, float(x), float(y)))
    return log


def straight(v=2.0, n=60, theta=0.3):
    return make_log([(v * k * math.cos(theta), v * k * math.sin(theta)) for k in range(n)])


def circle(v=2.0, r=36.8, n=40):
    w = v / r
    return make_log([(r * math.cos(w * k), r * math.sin(w * k)) for k in range(n)])


# -- GPS ------------------------------------------------------------------------------

def test_gps_noise_free_exact():
    assert log_gps((3.0, -4.0), 2.0, GpsConfig(noise_std=0.0)) == (2.0, 3.0, -4.0)


def test_gps_rms_radial_error():
    rng = np.random.default_rng(0)
    cfg = GpsConfig()
    r2 = [(s[1] ** 2 + s[2] ** 2) for s in (log_gps((0.0, 0.0), 0.0, cfg, rng) for _ in range(10_000))]
    assert math.sqrt(np.mean(r2)) == pytest.approx(1.5 * math.sqrt(2), rel=0.05)


def test_gps_requires_rng_when_noisy():
    with pytest.raises(ValueError):
        log_gps((0, 0), 0.0, GpsConfig())


def test_world_logs_at_one_hertz():
    _, _, world = run_calibration(ExperimentConfig(), 1.7, (0, 0))
    t = np.array(world.log.t)
    assert len(t) == 31
    assert np.all(np.diff(t) == 1.0)


def test_timestamps_strictly_increasing():
    log = TelemetryLog()
    log.append((0.0, 0, 0))
    with pytest.raises(ValueError):
        log.append((0.0, 1, 1))
    with pytest.raises(ValueError):
        log.append((-1.0, 1, 1))


# -- speed estimation -----------------------------------------------------------------

def test_moving_average_shrinking_ends():
    out = centered_moving_average(np.array([1.0, 2.0, 6.0, 4.0, 5.0]), 3)
    assert out == pytest.approx([1.0, 3.0, 4.0, 5.0, 5.0])
    pts = np.column_stack([np.arange(5.0), np.zeros(5)])
    assert centered_moving_average(pts, 5)[:, 0] == pytest.approx(np.arange(5.0))


def test_straight_line_exact():
    s = estimate_speed(straight())
    assert len(s) == 58
    assert np.all(np.abs(s.speed - 2.0) <= 1e-9)
    assert s.t == pytest.approx(np.arange(1, 59, dtype=float))


def test_too_few_samples():
    assert len(estimate_speed(make_log([(0, 0), (1, 0)]))) == 0


def circle_oracle(v, r, n, window=5):
    """Closed form for a noiseless circle sampled at 1 Hz.

    A centred difference over +/-h samples spans a chord of 2 r sin(h q), so it
    reads v sin(h q) / (h q) with q = v / r, along the tangent at its sample.
    Averaging such vectors at angles k q (|k| <= m) scales them by mean(cos k q).
    """
    q = v / r
    out = []
    for i in range(1, n - 1):
        h_of = lambda j: min(j, n - 1 - j, window // 2)
        m = min(i - 1, n - 2 - i, window // 2)
        vecs = []
        for k in range(-m, m + 1):
            h = h_of(i + k)
            a = (i + k) * q
            mag = v * math.sin(h * q) / (h * q)
            vecs.append((-mag * math.sin(a), mag * math.cos(a)))
        out.append(math.hypot(*np.mean(vecs, axis=0)))
    return np.array(out)


def test_circle_matches_chord_and_averaging_closed_form():
    s = estimate_speed(circle(n=40))
    assert s.speed == pytest.approx(circle_oracle(2.0, 36.8, 40), abs=1e-9)
    interior = s.speed[3:-3]
    q = 2.0 / 36.8
    frozen = 2.0 * math.sin(2 * q) / (2 * q) * np.mean([math.cos(k * q) for k in range(-2, 3)])
    assert interior == pytest.approx(frozen, abs=1e-12)
    assert frozen == pytest.approx(1.9901733, abs=1e-7)  # about 0.49% low


@pytest.mark.xfail(strict=True, reason="window smoothing on a 36.8 m turn costs about 0.5%, above 0.1%")
def test_circle_bias_below_tenth_percent():
    s = estimate_speed(circle(n=40))
    assert np.all(np.abs(s.speed - 2.0) / 2.0 < 1e-3)


def test_noisy_constant_speed_mean():
    means = []
    for seed in range(1000):
        rng = np.random.default_rng(seed)
        log = TelemetryLog()
        for k in range(31):
            log.append(log_gps((2.0 * k, 0.0), float(k), GpsConfig(), rng))
        means.append(estimate_speed(log).speed.mean())
    assert abs(np.mean(means) - 2.0) < 0.05


@given(st.floats(0.1, 4.0), st.floats(-math.pi, math.pi), st.integers(3, 80))
def test_straight_exact_any_direction(v, theta, n):
    s = estimate_speed(straight(v, n, theta))
    assert np.allclose(s.speed, v, atol=1e-9)


# -- metrics --------------------------------------------------------------------------

SCHED6 = IntervalSchedule(((SLOW, 3.0), (FAST, 3.0)))
PROF = compute_paces(2.0)
HAND = SpeedSeries(np.arange(6) + 0.5, np.array([1.4, 1.6, 1.5, 2.2, 2.5, 2.9]))


def test_pace_error_hand_oracle():
    per, overall = pace_error(HAND, SCHED6, PROF, guard_band=0.0)
    # slow: |1.4-1.5|, |1.6-1.5|, 0 -> 0.2/3; fast: 0.3, 0, 0.4 -> 0.7/3
    assert [m.abs_error for m in per] == pytest.approx([0.2 / 3, 0.7 / 3])
    assert overall == pytest.approx(0.15)
    assert [m.n_samples for m in per] == [3, 3]


def test_pace_variance_hand_oracle():
    per, overall = pace_variance(HAND, SCHED6, guard_band=0.0)
    assert per == pytest.approx([0.01, 0.37 / 3])
    assert overall == pytest.approx((0.01 + 0.37 / 3) / 2)


def test_guard_band_excludes_edges():
    per, _ = pace_error(HAND, SCHED6, PROF, guard_band=1.0)
    assert [m.n_samples for m in per] == [1, 1]


def test_constant_at_target_and_offset():
    sched = IntervalSchedule.alternating(4, 30.0)
    t = np.arange(1.0, 120.0)
    target = np.where(((t // 30) % 2) == 0, PROF.u_slow, PROF.u_fast)
    assert pace_error(SpeedSeries(t, target), sched, PROF)[1] == pytest.approx(0.0)
    assert pace_error(SpeedSeries(t, target + 0.3), sched, PROF)[1] == pytest.approx(0.3)
    assert pace_variance(SpeedSeries(t, target), sched)[1] == pytest.approx(0.0)


def test_empty_interval_flagged_and_excluded():
    speeds = SpeedSeries(np.array([0.5, 1.0, 1.5]), np.array([1.5, 1.6, 1.4]))
    per, overall = pace_error(speeds, SCHED6, PROF, guard_band=0.0)
    assert per[1].n_samples == 0 and math.isnan(per[1].abs_error) and not per[1].valid
    assert overall == pytest.approx(0.2 / 3)
    pv, ov = pace_variance(speeds, SCHED6, guard_band=0.0)
    assert math.isnan(pv[1]) and ov == pytest.approx(0.01)


def test_alternating_variance_closed_form():
    one = IntervalSchedule(((SLOW, 30.0),))
    v30 = SpeedSeries(np.arange(30) + 0.5, np.tile([1.9, 2.1], 15))
    assert pace_variance(v30, one, 0.0)[1] == pytest.approx(30 / 29 * 0.01, abs=1e-12)
    v4 = SpeedSeries(np.arange(4) + 0.5, np.tile([1.9, 2.1], 2))
    assert pace_variance(v4, one, 0.0)[1] == pytest.approx(0.0133333, abs=1e-6)


@given(st.lists(st.floats(0.5, 3.0), min_size=6, max_size=6), st.floats(-1, 1))
def test_variance_shift_invariant(vals, d):
    a = SpeedSeries(HAND.t, np.array(vals))
    b = SpeedSeries(HAND.t, np.array(vals) + d)
    assert pace_variance(b, SCHED6, 0.0)[1] == pytest.approx(pace_variance(a, SCHED6, 0.0)[1], abs=1e-9)


@given(st.lists(st.floats(0.0, 1.0), min_size=6, max_size=6), st.floats(0.0, 2.0))
def test_error_translation_equivariant(dev, d):
    # Every sample is above its target, so shifting up by d adds exactly d.
    base = np.array([1.5] * 3 + [2.5] * 3) + np.array(dev)
    e0 = pace_error(SpeedSeries(HAND.t, base), SCHED6, PROF, 0.0)[1]
    e1 = pace_error(SpeedSeries(HAND.t, base + d), SCHED6, PROF, 0.0)[1]
    assert e1 - e0 == pytest.approx(d, abs=1e-9)


# -- session summary ------------------------------------------------------------------

def test_summary_distance_and_duration():
    rep = session_summary(straight(2.0, 61, 0.0))
    assert rep.distance_total == pytest.approx(120.0, abs=1e-9)
    assert rep.duration_total == 60.0
    assert "distance 120.0 m over 60.0 s" in rep.to_text()


def test_summary_empty_log():
    with pytest.raises(ValueError):
        session_summary(TelemetryLog())


def test_summary_with_schedule():
    log = straight(2.0, 121, 0.0)
    rep = session_summary(log, IntervalSchedule(((SLOW, 60.0), (FAST, 60.0))), compute_paces(2.0))
    assert [m.abs_error for m in rep.per_interval] == pytest.approx([0.5, 0.5])
    assert rep.overall_variance == pytest.approx(0.0, abs=1e-18)
    assert rep.to_csv().splitlines()[0].startswith("interval,label")


def zero_motion_distance_per_step(seed, n=5000, sigma=1.5):
    rng = np.random.default_rng(seed)
    log = TelemetryLog()
    for k in range(n):
        log.append(log_gps((0.0, 0.0), float(k), GpsConfig(noise_std=sigma), rng))
    return path_distance(log) / (n - 1)


def test_zero_motion_distance_matches_noise_floor():
    # Interior steps of the 5-sample smoothed path are (p[i+3] - p[i-2]) / 5,
    # Gaussian with per-axis std sigma*sqrt(2)/5; their length is Rayleigh.
    floor = math.sqrt(math.pi / 2) * 1.5 * math.sqrt(2) / 5
    assert floor == pytest.approx(0.531736, abs=1e-6)
    per_step = np.mean([zero_motion_distance_per_step(s) for s in range(4)])
    assert per_step == pytest.approx(floor, rel=0.02)


@pytest.mark.xfail(strict=True, reason="1.5 m GPS noise leaves a smoothed-path floor near 26% of a 2 m/s session")
def test_zero_motion_distance_below_two_percent():
    moving = 2.0
    assert zero_motion_distance_per_step(0) < 0.02 * moving

"""Scenario orchestration behind the command-line subcommands.

Every ``run_*`` function works without touching the filesystem when
``out`` is None; the ``cmd_*`` wrappers add the run directory, CSVs and
printed summaries.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import CONDITION_MODEL, CONDITIONS, SNOOPIE, ExperimentConfig
from .outputs import CONTROL_HEADER, TELEMETRY_HEADER, RunDirectory, control_rows, telemetry_rows
from .protocol import IntervalSchedule, compute_paces
from .runners import spawn_participant
from .simulation import (
    CONDITION_CODES,
    STREAM_PARTICIPANT,
    SessionAbort,
    SessionResult,
    build_schedule,
    derive_rng,
    pace_profile,
    run_calibration,
    run_condition_session,
    run_full_session,
    run_lap_trial,
)
from .stats import AnovaResult, paired_t, rm_anova
from .telemetry import estimate_speed, fmt, pace_error, pace_variance, session_summary

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ABORT = 3
EXIT_SELFTEST = 4


# -- lap ------------------------------------------------------------------------------------

@dataclass
class LapSummary:
    trials: list
    per_target: dict

    @property
    def mean_error(self) -> float:
        return float(np.mean([t.mean_abs_error for t in self.trials]))

    @property
    def mean_variance(self) -> float:
        return float(np.mean([t.variance for t in self.trials]))


def run_lap(cfg: ExperimentConfig, out: RunDirectory | None = None) -> LapSummary:
    """Robot alone at each target speed, several trials each."""
    trials = []
    index = 0
    for target in cfg.lap.targets:
        for trial in range(cfg.lap.trials):
            trials.append(run_lap_trial(cfg, target, trial, index))
            if out is not None:
                out.add_seed(f"lap/{target:g}/{trial}", CONDITION_CODES["lap"], index)
            index += 1
    per_target = {}
    for target in cfg.lap.targets:
        ts = [t for t in trials if t.target == target]
        per_target[target] = (float(np.mean([t.mean_abs_error for t in ts])),
                              float(np.mean([t.variance for t in ts])))
    summary = LapSummary(trials, per_target)
    if out is not None:
        rows = []
        for tr in trials:
            for r in tr.records:
                rows.append((fmt(tr.target, 2), tr.trial, fmt(r.t, 3), fmt(r.speed), fmt(r.true_offset),
                             fmt(r.yaw_rate), int(r.detected)))
        out.write_rows("lap_ticks.csv", ("target_mps", "trial", "t_s", "speed_mps", "lateral_offset_m",
                                          "yaw_rate_radps", "detected"), rows)
        srows = [(fmt(t.target, 2), t.trial, fmt(float(t.measured.mean())), fmt(t.mean_abs_error),
                  fmt(t.variance)) for t in trials]
        srows.append(("all", "", "", fmt(summary.mean_error), fmt(summary.mean_variance)))
        out.write_rows("lap_summary.csv", ("target_mps", "trial", "mean_speed_mps", "abs_error_mps",
                                           "variance"), srows)
    return summary


def format_lap(summary: LapSummary) -> str:
    lines = [f"{'target':>7} {'error':>8} {'variance':>9}"]
    for target, (e, v) in summary.per_target.items():
        lines.append(f"{target:>7.2f} {e:>8.4f} {v:>9.4f}")
    lines.append(f"mean error {summary.mean_error:.4f} m/s, mean variance {summary.mean_variance:.4f}")
    return "\n".join(lines) + "\n"


# -- sessions -------------------------------------------------------------------------------

def session_metrics(result: SessionResult, cfg: ExperimentConfig) -> tuple[float, float]:
    speeds = estimate_speed(result.log, cfg.metrics.window)
    _, err = pace_error(speeds, result.schedule, result.profile, cfg.metrics.guard_band, result.schedule_t0)
    _, var = pace_variance(speeds, result.schedule, cfg.metrics.guard_band, result.schedule_t0)
    return err, var


def write_session(out: RunDirectory, stem: str, result: SessionResult, cfg: ExperimentConfig):
    speeds = estimate_speed(result.log, cfg.metrics.window)
    detected = [r.detected for r in result.control] if result.control else None
    out.write_rows(f"{stem}_telemetry.csv", TELEMETRY_HEADER,
                   telemetry_rows(result.log, speeds, result.targets, cfg.dt, detected))
    if result.control:
        out.write_rows(f"{stem}_control.csv", CONTROL_HEADER, control_rows(result.control))
    report = session_summary(result.log, result.schedule, result.profile, cfg.metrics.window,
                             cfg.metrics.guard_band, result.schedule_t0)
    out.write_text(f"{stem}_metrics.csv", report.to_csv())
    if result.cues:
        out.write_rows(f"{stem}_cues.csv", ("t_s", "next_segment", "next_label", "change_at_s"),
                       ((fmt(c.t + result.schedule_t0, 3), c.next_index, c.next_label,
                         fmt(c.at + result.schedule_t0, 3)) for c in result.cues))
    return report


def run_session(cfg: ExperimentConfig, out: RunDirectory | None = None) -> SessionResult:
    """Calibration, pause and one interval session under ``session.condition``."""
    sc = cfg.session
    schedule = build_schedule(cfg)
    frame_dir = out.path("frames") if out is not None and sc.dump_frames else None
    if frame_dir is not None:
        frame_dir.mkdir(parents=True, exist_ok=True)
    if sc.condition == SNOOPIE:
        result = run_full_session(cfg, sc.natural_pace, schedule, (0,), cfg.runners.follow_robot,
                                  sc.perception, sc.frame_dropout, frame_dir, sc.dump_frames)
    else:
        u_bar, cal, _ = run_calibration(cfg, sc.natural_pace, (0,))
        profile = pace_profile(cfg, u_bar)
        params = cfg.runners.by_model()[CONDITION_MODEL[sc.condition]]
        result = run_condition_session(cfg, sc.condition, profile, params, sc.natural_pace, (0,),
                                       schedule=schedule)
        result.calibration, result.u_bar = cal, u_bar
    if out is not None:
        if frame_dir is not None:
            for p in sorted(frame_dir.glob("*.pgm")):
                out._register(f"frames/{p.name}")
        out.add_seed(f"session/{sc.condition}", 0, CONDITION_CODES[sc.condition])
        write_session(out, sc.condition, result, cfg)
    return result


def run_calibrate(cfg: ExperimentConfig, out: RunDirectory | None = None):
    u_bar, cal, world = run_calibration(cfg, cfg.session.natural_pace, (0,))
    profile = pace_profile(cfg, u_bar)
    if out is not None:
        out.add_seed("calibration", 0, CONDITION_CODES["calibration"])
        out.write_rows("calibration.csv", ("t_s", "commanded_mps"),
                       ((fmt(t, 3), fmt(v)) for t, v in cal.speed_history))
        out.write_rows("paces.csv", ("u_bar_mps", "u_slow_mps", "u_fast_mps", "delta_u_mps", "cap_mps"),
                       [(fmt(profile.u_bar), fmt(profile.u_slow), fmt(profile.u_fast), fmt(profile.delta_u),
                         fmt(profile.cap))])
    return u_bar, profile, cal


# -- study ----------------------------------------------------------------------------------

@dataclass
class ParticipantResult:
    index: int
    natural_pace: float
    order: tuple
    u_bar: float | None = None
    error: dict = field(default_factory=dict)
    variance: dict = field(default_factory=dict)
    excluded: str = ""
    sessions: dict = field(default_factory=dict)


@dataclass
class StudyResult:
    participants: list[ParticipantResult]
    error_anova: AnovaResult | None
    variance_anova: AnovaResult | None

    @property
    def included(self) -> list[ParticipantResult]:
        return [p for p in self.participants if not p.excluded]

    def matrix(self, metric: str) -> np.ndarray:
        return np.array([[getattr(p, metric)[c] for c in CONDITIONS] for p in self.included])

    def condition_means(self, metric: str) -> np.ndarray:
        return self.matrix(metric).mean(axis=0)

    def condition_se(self, metric: str) -> np.ndarray:
        m = self.matrix(metric)
        return m.std(axis=0, ddof=1) / math.sqrt(len(m))


def run_participant(cfg: ExperimentConfig, index: int, keep_sessions: bool = False) -> ParticipantResult:
    prng = derive_rng(cfg.master_seed, index, STREAM_PARTICIPANT)
    part = spawn_participant(cfg.runners.population, prng, cfg.runners.by_model(), CONDITIONS)
    res = ParticipantResult(index, part.natural_pace, part.condition_order)
    order = part.condition_order
    st = cfg.study
    try:
        u_bar, _, _ = run_calibration(cfg, part.natural_pace, (index,), part.params["follow_robot"])
        res.u_bar = u_bar
        profile = pace_profile(cfg, u_bar)
        for cond in order:
            params = part.params[CONDITION_MODEL[cond]]
            result = run_condition_session(cfg, cond, profile, params, part.natural_pace, (index,),
                                           st.perception, st.frame_dropout)
            res.error[cond], res.variance[cond] = session_metrics(result, cfg)
            if keep_sessions:
                res.sessions[cond] = result
    except SessionAbort as exc:
        res.excluded = str(exc)
    return res


def run_study(cfg: ExperimentConfig, out: RunDirectory | None = None) -> StudyResult:
    """Within-subjects study: every participant runs every condition."""
    keep = out is not None and cfg.study.write_telemetry
    participants = []
    for i in range(cfg.study.participants):
        p = run_participant(cfg, i, keep)
        participants.append(p)
        if out is not None:
            out.add_seed(f"participant/{i}", i, STREAM_PARTICIPANT)
            out.add_seed(f"participant/{i}/calibration", i, CONDITION_CODES["calibration"])
            if p.excluded:
                out.notes.append(f"participant {i} excluded: {p.excluded}")
            for cond, result in p.sessions.items():
                out.add_seed(f"participant/{i}/{cond}", i, CONDITION_CODES[cond])
                write_session(out, f"telemetry/p{i:02d}_{cond}", result, cfg)
            p.sessions = {}
    result = StudyResult(participants, None, None)
    if len(result.included) >= 2:
        result.error_anova = rm_anova(result.matrix("error"))
        result.variance_anova = rm_anova(result.matrix("variance"))
    if out is not None:
        write_study(out, result)
    return result


def write_study(out: RunDirectory, study: StudyResult):
    out.write_rows("participants.csv", ("participant", "natural_pace_mps", "u_bar_mps", "condition_order",
                                        "excluded"),
                   [(p.index, fmt(p.natural_pace), fmt(p.u_bar), " ".join(p.order), p.excluded)
                    for p in study.participants])
    rows = []
    for p in study.included:
        for c in CONDITIONS:
            rows.append((p.index, c, fmt(p.error[c]), fmt(p.variance[c])))
    out.write_rows("metrics.csv", ("participant", "condition", "pace_error_mps", "pace_variance"), rows)
    for metric, name in (("error", "error_matrix.csv"), ("variance", "variance_matrix.csv")):
        out.write_rows(name, ("participant",) + CONDITIONS,
                       [(p.index, *(fmt(getattr(p, metric)[c]) for c in CONDITIONS)) for p in study.included])
    out.write_text("report.txt", format_study(study))


def format_study(study: StudyResult) -> str:
    lines = [f"participants: {len(study.participants)} ({len(study.included)} included)"]
    if study.error_anova is None:
        lines.append("too few participants for ANOVA")
        return "\n".join(lines) + "\n"
    for metric, anova in (("error", study.error_anova), ("variance", study.variance_anova)):
        lines.append("")
        lines.append(f"pace {metric}")
        means, se = study.condition_means(metric), study.condition_se(metric)
        for c, m, s in zip(CONDITIONS, means, se):
            lines.append(f"  {c:<9} mean {m:.4f}  se {s:.4f}")
        lines.append("  " + anova.summary())
    return "\n".join(lines) + "\n"


# -- extended protocol ----------------------------------------------------------------------

@dataclass
class ExtendedResult:
    sessions: list[SessionResult]
    natural_paces: list[float]
    distances: list[float]
    durations: list[float]

    @property
    def total_distance(self) -> float:
        return float(sum(self.distances))

    @property
    def total_duration(self) -> float:
        return float(sum(self.durations))

    @property
    def max_fast_pace(self) -> float:
        return max(s.profile.u_fast for s in self.sessions)


def extended_schedule(cfg: ExperimentConfig) -> IntervalSchedule:
    ex = cfg.extended
    return IntervalSchedule.alternating(ex.n_segments, ex.segment_duration, cfg.schedule.first,
                                        cfg.schedule.cue_lead)


def run_extended(cfg: ExperimentConfig, out: RunDirectory | None = None) -> ExtendedResult:
    """Repeated long sessions, each starting with a fresh calibration."""
    ex = cfg.extended
    schedule = extended_schedule(cfg)
    prng = derive_rng(cfg.master_seed, 0, STREAM_PARTICIPANT)
    base = float(ex.natural_pace)
    res = ExtendedResult([], [], [], [])
    for k in range(ex.sessions):
        pace = base + ex.pace_drift * k + ex.pace_jitter * float(prng.standard_normal())
        pace = min(max(pace, 0.2), 4.0)
        result = run_full_session(cfg, pace, schedule, (k,), cfg.runners.follow_robot,
                                  ex.perception, ex.frame_dropout)
        report = session_summary(result.log, result.schedule, result.profile, cfg.metrics.window,
                                 cfg.metrics.guard_band, result.schedule_t0)
        res.sessions.append(result)
        res.natural_paces.append(pace)
        res.distances.append(report.distance_total)
        res.durations.append(report.duration_total)
        if out is not None:
            out.add_seed(f"extended/{k}", k, CONDITION_CODES[SNOOPIE])
            write_session(out, f"session_{k + 1}", result, cfg)
    if out is not None:
        rows = [(k + 1, fmt(p), fmt(s.u_bar), fmt(s.profile.u_slow), fmt(s.profile.u_fast), fmt(d, 1),
                 fmt(t / 60, 2))
                for k, (p, s, d, t) in enumerate(zip(res.natural_paces, res.sessions, res.distances, res.durations))]
        rows.append(("total", "", "", "", "", fmt(res.total_distance, 1), fmt(res.total_duration / 60, 2)))
        out.write_rows("summary.csv", ("session", "natural_pace_mps", "u_bar_mps", "u_slow_mps", "u_fast_mps",
                                       "distance_m", "duration_min"), rows)
        out.write_text("report.txt", format_extended(res))
    return res


def format_extended(res: ExtendedResult) -> str:
    lines = []
    for k, (s, d, t) in enumerate(zip(res.sessions, res.distances, res.durations)):
        lines.append(f"session {k + 1}: u_bar {s.u_bar:.3f}, slow {s.profile.u_slow:.3f}, "
                     f"fast {s.profile.u_fast:.3f}, {d / 1000:.2f} km in {t / 60:.1f} min")
    lines.append(f"total {res.total_distance / 1000:.2f} km in {res.total_duration / 60:.1f} min")
    return "\n".join(lines) + "\n"


# -- ANOVA on a CSV -------------------------------------------------------------------------

class MatrixFormatError(ValueError):
    pass


_LABEL_HEADERS = {"", "subject", "participant", "id"}


def read_matrix(path) -> tuple[list[str], np.ndarray]:
    """Subjects x conditions matrix from a CSV with a header row.

    A first column headed ``subject``, ``participant``, ``id`` or blank is
    treated as row labels.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise MatrixFormatError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    skip = 1 if header and header[0].lower() in _LABEL_HEADERS else 0
    names = header[skip:]
    if len(names) < 2:
        raise MatrixFormatError(f"{path}: line 1: need at least 2 condition columns")
    data = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not any(cell.strip() for cell in row):
            continue
        cells = row[skip:]
        if len(cells) != len(names):
            raise MatrixFormatError(f"{path}: line {lineno}: expected {len(names)} values, found {len(cells)}")
        values = []
        for col, (name, cell) in enumerate(zip(names, cells), start=skip + 1):
            if not cell.strip():
                raise MatrixFormatError(f"{path}: line {lineno}, column {col} ({name}): missing value")
            try:
                v = float(cell)
            except ValueError:
                raise MatrixFormatError(f"{path}: line {lineno}, column {col} ({name}): "
                                        f"not a number: {cell!r}") from None
            if not math.isfinite(v):
                raise MatrixFormatError(f"{path}: line {lineno}, column {col} ({name}): non-finite value")
            values.append(v)
        data.append(values)
    if len(data) < 2:
        raise MatrixFormatError(f"{path}: need at least 2 subject rows")
    return names, np.array(data)


def anova_report(names: list[str], data: np.ndarray) -> str:
    res = rm_anova(data)
    lines = [f"subjects: {data.shape[0]}, conditions: {', '.join(names)}"]
    for name, m in zip(names, data.mean(axis=0)):
        lines.append(f"  {name:<12} mean {m:.6g}")
    text = "\n".join(lines) + "\n" + res.table()
    if data.shape[1] == 2 and not res.degenerate:
        t, df, p = paired_t(data[:, 0], data[:, 1])
        text += (f"paired t({df})={t:.6g}, p={p:.6g}; t^2={t * t:.6g} vs F={res.F:.6g} "
                 f"(|diff| {abs(t * t - res.F):.2e})\n")
    return text


# -- plot-ready report ----------------------------------------------------------------------

def write_report(study_dir, out: RunDirectory):
    """Long-format CSVs for the accuracy, consistency and speed-trace panels."""
    study_dir = Path(study_dir)
    metrics = study_dir / "metrics.csv"
    if not metrics.exists():
        raise FileNotFoundError(f"{metrics} not found; run the study first")
    with open(metrics, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    out.write_rows("accuracy_by_condition.csv", ("condition", "participant", "pace_error_mps"),
                   [(r["condition"], r["participant"], r["pace_error_mps"]) for r in rows])
    out.write_rows("consistency_by_condition.csv", ("condition", "participant", "pace_variance"),
                   [(r["condition"], r["participant"], r["pace_variance"]) for r in rows])
    trace_rows = []
    for path in sorted((study_dir / "telemetry").glob("p*_telemetry.csv")):
        participant, cond = path.name[1:].split("_", 2)[:2]
        with open(path, newline="", encoding="utf-8") as fh:
            for r in csv.DictReader(fh):
                trace_rows.append((cond, int(participant), r["t_s"], r["target_mps"], r["speed_est_mps"]))
    out.write_rows("speed_trace.csv", ("condition", "participant", "t_s", "target_mps", "speed_est_mps"),
                   trace_rows)
    summary = []
    for cond in CONDITIONS:
        e = [float(r["pace_error_mps"]) for r in rows if r["condition"] == cond]
        v = [float(r["pace_variance"]) for r in rows if r["condition"] == cond]
        if e:
            se = lambda x: float(np.std(x, ddof=1) / math.sqrt(len(x))) if len(x) > 1 else math.nan
            summary.append((cond, len(e), fmt(float(np.mean(e))), fmt(se(e)), fmt(float(np.mean(v))), fmt(se(v))))
    out.write_rows("condition_summary.csv", ("condition", "n", "error_mean", "error_se", "variance_mean",
                                             "variance_se"), summary)


# -- self-test ------------------------------------------------------------------------------

def selftest(cfg: ExperimentConfig) -> list[tuple[str, bool, str]]:
    """Quick, reduced versions of the headline checks."""
    checks = []
    lap = run_lap(cfg)
    checks.append(("lap speed error", 0.013 <= lap.mean_error <= 0.039, f"{lap.mean_error:.4f} m/s"))
    checks.append(("lap speed variance", 0.014 <= lap.mean_variance <= 0.042, f"{lap.mean_variance:.4f}"))
    p = compute_paces(2.0)
    checks.append(("pace computation", (p.u_slow, p.u_fast) == (1.5, 2.5) and compute_paces(2.3).u_fast == 2.5,
                   f"({p.u_slow}, {p.u_fast})"))
    a = rm_anova([[1, 2, 3], [2, 3, 5], [3, 4, 4]])
    checks.append(("anova oracle", abs(a.F - 9.0) < 1e-9 and abs(a.p - 1 / 30.25) < 1e-9, a.summary()))
    errs = [abs(run_calibration(cfg, u, (s,))[0] - u) for u in (1.0, 1.8, 2.2) for s in range(5)]
    checks.append(("calibration convergence", max(errs) <= 0.1, f"max |u_bar - u*| {max(errs):.3f}"))
    study = run_study(cfg)
    e = study.condition_means("error")
    v = study.condition_means("variance")
    checks.append(("study error ordering", bool(e[0] < e[1] < e[2]), " < ".join(f"{x:.3f}" for x in e)))
    checks.append(("study variance ordering", bool(v[0] < v[2] < v[1]), f"{v[0]:.3f}, {v[2]:.3f}, {v[1]:.3f}"))
    checks.append(("study error anova", study.error_anova.p < 0.05, study.error_anova.summary()))
    return checks


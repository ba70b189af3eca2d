"""Run directories, manifests and CSV writers.

A manifest is written before any data file and rewritten when the run
finishes, so an interrupted run is recognisable by ``"complete": false``.
Nothing written here depends on wall-clock time or the output location,
which keeps identical runs byte-identical.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

from . import __version__
from .config import ExperimentConfig
from .telemetry import SpeedSeries, TelemetryLog, fmt

TELEMETRY_HEADER = ("t_s", "x_m", "y_m", "speed_est_mps", "target_mps", "segment_label", "detected")
CONTROL_HEADER = ("t_s", "offset_m", "angle_rad", "yaw_rate_radps", "target_mps", "detected")


def config_snapshot(cfg: ExperimentConfig) -> dict:
    """Config document without the output location."""
    data = cfg.to_dict()
    data.pop("output_dir", None)
    return data


def snapshot_digest(cfg: ExperimentConfig) -> str:
    import hashlib
    text = json.dumps(config_snapshot(cfg), sort_keys=True)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


class RunDirectory:
    """One command's output tree with its manifest."""

    def __init__(self, root, command: str, cfg: ExperimentConfig):
        self.root = Path(root)
        self.command = command
        self.cfg = cfg
        self.files: list[str] = []
        self.seeds: list[dict] = []
        self.notes: list[str] = []
        self.complete = False
        self.root.mkdir(parents=True, exist_ok=True)
        self.write_manifest()
        self.write_text("config.json", json.dumps(config_snapshot(cfg), indent=2, sort_keys=True) + "\n")

    def path(self, name: str) -> Path:
        p = self.root / name
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def _register(self, name: str):
        if name not in self.files:
            self.files.append(name)

    def write_text(self, name: str, text: str) -> Path:
        p = self.path(name)
        with open(p, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        self._register(name)
        return p

    def write_rows(self, name: str, header, rows) -> Path:
        p = self.path(name)
        with open(p, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
        self._register(name)
        return p

    def add_seed(self, run: str, *keys: int):
        self.seeds.append({"run": run, "entropy": [self.cfg.master_seed, *keys]})

    def write_manifest(self):
        doc = {
            "command": self.command,
            "code_version": __version__,
            "config_sha256": snapshot_digest(self.cfg),
            "master_seed": self.cfg.master_seed,
            "seed_rule": "numpy SeedSequence([master_seed, participant, condition, stream])",
            "seeds": self.seeds,
            "files": sorted(self.files),
            "notes": self.notes,
            "complete": self.complete,
        }
        with open(self.root / "manifest.json", "w", encoding="utf-8", newline="\n") as fh:
            fh.write(json.dumps(doc, indent=2) + "\n")

    def finish(self):
        self.complete = True
        self.write_manifest()


def telemetry_rows(log: TelemetryLog, speeds: SpeedSeries, targets, dt: float, detected=None):
    """Rows of the telemetry CSV, one per speed estimate.

    ``targets`` holds ``(t, target, label)`` for every tick; ``detected``
    (optional) holds per-tick line detection flags of the robot pacer.
    """
    t_log = log.t
    index = {round(t, 6): i for i, t in enumerate(t_log)}
    for ts, v in zip(speeds.t, speeds.speed):
        i = index[round(float(ts), 6)]
        k = max(0, int(round(ts / dt)) - 1)
        _, target, label = targets[min(k, len(targets) - 1)] if targets else (0, math.nan, "")
        det = "" if detected is None else str(int(detected[min(k, len(detected) - 1)]))
        yield (fmt(float(ts), 3), fmt(log.x[i]), fmt(log.y[i]), fmt(float(v)), fmt(target), label, det)


def control_rows(records):
    for r in records:
        yield (fmt(r.t, 3), fmt(r.offset), fmt(r.angle), fmt(r.yaw_rate), fmt(r.target), int(r.detected))

"""File formats: tracks/labels CSV, flat key=value configs, report JSON.

Tracks CSV header is ``frame,track_id,x,y[,label][,status]`` with
integer frame/track ids and sub-pixel float coordinates. All writes go
through a write-temp-then-rename step.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class TrackIOError(ValueError):
    pass


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


@dataclass
class TrackTable:
    """In-memory track data: positions per frame for a fixed id set."""

    ids: np.ndarray  # (N,) int
    positions: np.ndarray  # (F, N, 2) float
    labels: np.ndarray | None = None  # (N,) int
    status: np.ndarray | None = None  # (F, N) str

    @property
    def n_frames(self) -> int:
        return self.positions.shape[0]

    @property
    def n_tracks(self) -> int:
        return self.ids.size


def write_tracks_csv(path, table: TrackTable) -> None:
    buf = io.StringIO()
    cols = ["frame", "track_id", "x", "y"]
    if table.labels is not None:
        cols.append("label")
    if table.status is not None:
        cols.append("status")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(cols)
    for f in range(table.n_frames):
        for j, tid in enumerate(table.ids):
            row = [f, int(tid), f"{table.positions[f, j, 0]:.9f}", f"{table.positions[f, j, 1]:.9f}"]
            if table.labels is not None:
                row.append(int(table.labels[j]))
            if table.status is not None:
                row.append(table.status[f, j])
            writer.writerow(row)
    atomic_write_text(path, buf.getvalue())


def read_tracks_csv(path) -> TrackTable:
    path = Path(path)
    if not path.is_file():
        raise TrackIOError(f"{path}: no such tracks file")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:4] != ["frame", "track_id", "x", "y"]:
            raise TrackIOError(f"{path}: expected header frame,track_id,x,y[,label][,status]")
        has_label = "label" in header
        has_status = "status" in header
        label_col = header.index("label") if has_label else -1
        status_col = header.index("status") if has_status else -1
        rows = []
        for row in reader:
            if not row:
                continue
            rows.append(row)
    if not rows:
        raise TrackIOError(f"{path}: no track rows")
    frames = np.array([int(r[0]) for r in rows])
    ids = np.array([int(r[1]) for r in rows])
    uniq_frames = np.unique(frames)
    uniq_ids = np.unique(ids)
    if not np.array_equal(uniq_frames, np.arange(uniq_frames.size)):
        raise TrackIOError(f"{path}: frames are not contiguous from 0")
    id_index = {int(t): j for j, t in enumerate(uniq_ids)}
    pos = np.full((uniq_frames.size, uniq_ids.size, 2), np.nan)
    labels = np.full(uniq_ids.size, -1, dtype=int) if has_label else None
    status = np.full((uniq_frames.size, uniq_ids.size), "tracked", dtype=object) if has_status else None
    for r in rows:
        f = int(r[0])
        j = id_index[int(r[1])]
        pos[f, j] = (float(r[2]), float(r[3]))
        if has_label:
            labels[j] = int(r[label_col])
        if has_status:
            status[f, j] = r[status_col]
    if np.isnan(pos).any():
        raise TrackIOError(f"{path}: missing (frame, track_id) combinations")
    return TrackTable(ids=uniq_ids, positions=pos, labels=labels, status=status)


def write_labels_csv(path, ids, labels) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["track_id", "label"])
    for tid, lab in zip(ids, labels):
        writer.writerow([int(tid), int(lab)])
    atomic_write_text(path, buf.getvalue())


def read_labels_csv(path) -> dict[int, int]:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["track_id", "label"]:
            raise TrackIOError(f"{path}: expected header track_id,label")
        return {int(r[0]): int(r[1]) for r in reader if r}


# ---------------------------------------------------------------------------
# Flat key=value config files
# ---------------------------------------------------------------------------


def parse_config_text(text: str) -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise TrackIOError(f"config line {lineno}: expected key=value, got {raw!r}")
        key, val = line.split("=", 1)
        out[key.strip()] = val.strip()
    return out


def load_config_file(path) -> dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise TrackIOError(f"{path}: no such config file")
    return parse_config_text(path.read_text())


def dump_config(values: dict) -> str:
    lines = [f"{k} = {values[k]}" for k in sorted(values)]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Evaluation report
# ---------------------------------------------------------------------------


@dataclass
class EvalReport:
    """Tracking-error counts: features drifting beyond the tolerance."""

    eps: float
    per_frame: list[int]
    average: float
    n_tracks: int
    noise_table: dict = field(default_factory=dict)  # sigma2 -> average
    segmentation_error: float | None = None

    def to_dict(self) -> dict:
        out = {
            "eps": self.eps,
            "per_frame_errors": self.per_frame,
            "average_errors": self.average,
            "n_tracks": self.n_tracks,
        }
        if self.noise_table:
            out["noise_table"] = {str(k): v for k, v in sorted(self.noise_table.items())}
        if self.segmentation_error is not None:
            out["segmentation_error"] = self.segmentation_error
        return out

    def table(self) -> str:
        lines = [f"{'frame':>6}  {'errors':>6}"]
        for f, c in enumerate(self.per_frame, start=1):
            lines.append(f"{f:>6}  {c:>6}")
        lines.append(f"average over {len(self.per_frame)} frames: {self.average:.4f}")
        return "\n".join(lines)


def write_report_json(path, payload: dict) -> None:
    atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def evaluate_tracks(
    tracks: TrackTable,
    truth: TrackTable,
    eps: float,
    include_occluded: bool = False,
) -> EvalReport:
    """Count per frame the features drifting more than ``eps`` pixels.

    Strict inequality: a drift of exactly ``eps`` is not an error. Tracks
    flagged lost/degenerate count as errors. Truth rows whose status is
    not visible are excluded unless ``include_occluded``.
    """
    if not np.array_equal(tracks.ids, truth.ids):
        raise TrackIOError("track id sets differ between tracks and ground truth")
    if tracks.n_frames != truth.n_frames:
        raise TrackIOError(
            f"frame count mismatch: {tracks.n_frames} tracked vs {truth.n_frames} truth"
        )
    per_frame = []
    for f in range(1, tracks.n_frames):
        drift = np.sqrt(((tracks.positions[f] - truth.positions[f]) ** 2).sum(axis=1))
        bad = drift > eps
        if tracks.status is not None:
            bad |= tracks.status[f] != "tracked"
        consider = np.ones(tracks.n_tracks, dtype=bool)
        if not include_occluded and truth.status is not None:
            consider = truth.status[f] == "visible"
        per_frame.append(int(np.sum(bad & consider)))
    average = float(np.mean(per_frame)) if per_frame else 0.0
    return EvalReport(
        eps=eps,
        per_frame=per_frame,
        average=average,
        n_tracks=tracks.n_tracks,
    )

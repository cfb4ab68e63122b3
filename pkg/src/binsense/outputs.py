"""CSV and JSON emission for the command-line runs."""

from __future__ import annotations

import json
import sys
from pathlib import Path
from typing import Sequence

import pandas as pd

from binsense.geometry import SensorField
from binsense.observe import CounterField, Snapshot
from binsense.track import TrackResult


def provenance_line(config_sha256: str, seed: int) -> str:
    return f"# config_sha256={config_sha256} seed={seed}\n"


def write_csv(path: Path, frame: pd.DataFrame, config_sha256: str, seed: int) -> Path:
    """Comment line with config hash and seed, then header and rows."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(provenance_line(config_sha256, seed))
        frame.to_csv(fh, index=False, float_format="%.10g", lineterminator="\n")
    return path


def write_json(path: Path, payload: dict) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def error_record(error: str, message: str, details: list[dict] | None = None) -> None:
    """Machine-readable failure on stderr."""
    record = {"error": error, "message": message}
    if details is not None:
        record["details"] = details
    print(json.dumps(record, sort_keys=True), file=sys.stderr)


def snapshots_frame(field: SensorField, snapshots: Sequence[Snapshot]) -> pd.DataFrame:
    n = len(field)
    rows = {
        "time": [snap.time for snap in snapshots for _ in range(n)],
        "sensor_index": [i for _ in snapshots for i in range(n)],
        "x": [float(field.positions[i, 0]) for _ in snapshots for i in range(n)],
        "y": [float(field.positions[i, 1]) for _ in snapshots for i in range(n)],
        "sign": [int(s) for snap in snapshots for s in snap.signs],
    }
    return pd.DataFrame(rows)


def counters_frame(field: SensorField, counters: CounterField) -> pd.DataFrame:
    return pd.DataFrame(
        {
            "sensor_index": range(len(field)),
            "x": field.positions[:, 0],
            "y": field.positions[:, 1],
            "count": counters.counts,
        }
    )


def track_frame(result: TrackResult) -> pd.DataFrame:
    rows = []
    for record, retro, truth in zip(result.records, result.retrodicted, result.truth):
        rows.append(
            {
                "t": record.time,
                "true_x": truth.position.x,
                "true_y": truth.position.y,
                "est_x": record.position.x,
                "est_y": record.position.y,
                "retro_x": retro.x,
                "retro_y": retro.y,
                "lambda": record.lam,
                "theta": record.theta,
                "dir_x": record.direction.x,
                "dir_y": record.direction.y,
                "flags": "|".join(record.flags),
            }
        )
    return pd.DataFrame(rows)

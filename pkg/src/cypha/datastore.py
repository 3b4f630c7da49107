"""Append-only time-series log with CSV export.

Rows carry the nine dataset attributes. Storage is newline-delimited JSON
in rotating segment files (oldest segment dropped when over budget, so
logging can never block control); export is RFC 4180 CSV with the fixed
header `timestamp,ph,tds,do,water_temp,air_temp,humidity,wp,ap`.

Timestamps are unix seconds written at millisecond precision; other floats
are written with nine decimals so an export/import round trip stays within
1e-9 of the stored values.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, fields
from pathlib import Path

CSV_HEADER = "timestamp,ph,tds,do,water_temp,air_temp,humidity,wp,ap"
FIELD_ORDER = CSV_HEADER.split(",")


class OrderError(ValueError):
    """Row timestamps must be strictly increasing."""


@dataclass(slots=True)
class LogRow:
    timestamp: float
    ph: float
    tds: float
    do: float
    water_temp: float
    air_temp: float
    humidity: float
    wp: int
    ap: int

    def to_csv(self) -> str:
        return (f"{self.timestamp:.3f},{self.ph:.9f},{self.tds:.9f},{self.do:.9f},"
                f"{self.water_temp:.9f},{self.air_temp:.9f},{self.humidity:.9f},"
                f"{self.wp:d},{self.ap:d}")

    def to_json(self) -> str:
        return json.dumps({f.name: getattr(self, f.name) for f in fields(self)},
                          separators=(",", ":"))

    @classmethod
    def from_csv(cls, line: str) -> "LogRow":
        parts = line.rstrip("\n").split(",")
        if len(parts) != 9:
            raise ValueError(f"expected 9 fields, got {len(parts)}")
        vals = [float(p) for p in parts[:7]]
        return cls(*vals, wp=int(parts[7]), ap=int(parts[8]))

    @classmethod
    def from_json(cls, line: str) -> "LogRow":
        obj = json.loads(line)
        return cls(**{f.name: obj[f.name] for f in fields(cls)})


class DataStore:
    """Single-writer append log; readers get consistent snapshots.

    When `directory` is None the store is memory-only (handy in tests);
    otherwise rows are appended to `data.ndjson`, rotating to numbered
    segments at `segment_rows` rows and keeping at most `max_segments`
    closed segments on disk.
    """

    def __init__(self, directory: str | Path | None = None,
                 segment_rows: int = 200_000, max_segments: int = 8,
                 fsync: bool = False):
        self.directory = Path(directory) if directory is not None else None
        self.segment_rows = segment_rows
        self.max_segments = max_segments
        self.fsync = fsync
        self._rows: list[LogRow] = []
        self._last_ts: float | None = None
        self._file = None
        self._file_rows = 0
        self._segment_index = 0
        if self.directory is not None:
            self.directory.mkdir(parents=True, exist_ok=True)
            self._open_active()

    def _open_active(self) -> None:
        self._file = (self.directory / "data.ndjson").open("a", encoding="utf-8")
        self._file_rows = 0

    def append(self, row: LogRow) -> None:
        if self._last_ts is not None and row.timestamp <= self._last_ts:
            raise OrderError(
                f"timestamp {row.timestamp} not after {self._last_ts}")
        self._last_ts = row.timestamp
        self._rows.append(row)
        if self._file is not None:
            self._file.write(row.to_json() + "\n")
            if self.fsync:
                self._file.flush()
                os.fsync(self._file.fileno())
            self._file_rows += 1
            if self._file_rows >= self.segment_rows:
                self._rotate()

    def _rotate(self) -> None:
        self._file.close()
        self._segment_index += 1
        active = self.directory / "data.ndjson"
        active.rename(self.directory / f"data.{self._segment_index:05d}.ndjson")
        segments = sorted(self.directory.glob("data.*.ndjson"))
        while len(segments) > self.max_segments:
            segments.pop(0).unlink()
        self._open_active()

    def query(self, t0: float, t1: float) -> list[LogRow]:
        """All rows with t0 <= ts <= t1 in ascending order."""
        if t0 > t1:
            raise ValueError("t0 must not exceed t1")
        return [r for r in self._rows if t0 <= r.timestamp <= t1]

    def __len__(self) -> int:
        return len(self._rows)

    @property
    def rows(self) -> list[LogRow]:
        return list(self._rows)

    def export_csv(self, path: str | Path) -> Path:
        path = Path(path)
        with path.open("w", encoding="utf-8", newline="") as fh:
            fh.write(CSV_HEADER + "\n")
            for row in self._rows:
                fh.write(row.to_csv() + "\n")
        return path

    def close(self) -> None:
        if self._file is not None:
            self._file.close()
            self._file = None


def import_csv(path: str | Path) -> list[LogRow]:
    """Read an exported CSV back into rows, validating header and order."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != CSV_HEADER:
        raise ValueError(f"unexpected CSV header in {path}")
    rows = []
    last = None
    for i, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        row = LogRow.from_csv(line)
        if last is not None and row.timestamp <= last:
            raise OrderError(f"line {i}: timestamps not strictly increasing")
        last = row.timestamp
        rows.append(row)
    return rows

"""Append-only sqlite store of per-run evaluation results."""
from __future__ import annotations

import datetime as _dt
import os
import sqlite3
import subprocess
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from .. import __version__
from ..errors import EmptyStore, SpoofBenchError
from ..metrics import AggregateRow, EvalResult, aggregate_all

_SCHEMA = """
CREATE TABLE IF NOT EXISTS results (
    model TEXT NOT NULL,
    feature TEXT NOT NULL,
    length TEXT NOT NULL,
    seed INTEGER NOT NULL,
    eval_manifest TEXT NOT NULL,
    status TEXT NOT NULL CHECK (status IN ('done', 'failed')),
    eer REAL,
    eer_threshold REAL,
    min_tdcf REAL,
    score_path TEXT,
    checkpoint_path TEXT,
    error TEXT,
    config_hash TEXT,
    revision TEXT,
    started_at TEXT,
    finished_at TEXT,
    PRIMARY KEY (model, feature, length, seed, eval_manifest)
)
"""


class ImmutableRecord(SpoofBenchError):
    pass


@dataclass(frozen=True)
class RunKey:
    model: str
    feature: str
    length: str
    seed: int
    eval_manifest: str


@dataclass(frozen=True)
class RunRecord:
    key: RunKey
    status: str
    result: EvalResult | None = None
    score_path: str | None = None
    checkpoint_path: str | None = None
    error: str | None = None
    config_hash: str | None = None
    revision: str | None = None
    started_at: str | None = None
    finished_at: str | None = None


def now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def revision() -> str:
    """Short git revision of the working tree when available, else the package version."""
    try:
        out = subprocess.run(["git", "rev-parse", "--short", "HEAD"], capture_output=True,
                             text=True, timeout=5, cwd=Path(__file__).parent)
        if out.returncode == 0 and out.stdout.strip():
            return f"{out.stdout.strip()}+spoofbench-{__version__}"
    except (OSError, subprocess.SubprocessError):
        pass
    return f"spoofbench-{__version__}"


class ResultsStore:
    """Records keyed by (model, feature, length, seed, eval_manifest).

    A 'done' record is never overwritten; a 'failed' record may be replaced
    by a later attempt. Writes happen inside single transactions so readers
    only ever see complete rows.
    """

    def __init__(self, path: str | os.PathLike = ":memory:"):
        self.path = str(path)
        if self.path != ":memory:":
            Path(self.path).parent.mkdir(parents=True, exist_ok=True)
        self._conn = sqlite3.connect(self.path)
        with self._conn:
            self._conn.execute(_SCHEMA)

    def close(self):
        self._conn.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def put(self, record: RunRecord) -> None:
        k = record.key
        res = record.result
        with self._conn:
            row = self._conn.execute(
                "SELECT status FROM results WHERE model=? AND feature=? AND length=? "
                "AND seed=? AND eval_manifest=?",
                (k.model, k.feature, k.length, k.seed, k.eval_manifest)).fetchone()
            if row is not None and row[0] == "done":
                raise ImmutableRecord(f"completed record already stored for {k}")
            self._conn.execute(
                "INSERT OR REPLACE INTO results VALUES (?,?,?,?,?,?,?,?,?,?,?,?,?,?,?,?)",
                (k.model, k.feature, k.length, k.seed, k.eval_manifest, record.status,
                 None if res is None else res.eer,
                 None if res is None else res.eer_threshold,
                 None if res is None else res.min_tdcf,
                 record.score_path, record.checkpoint_path, record.error,
                 record.config_hash, record.revision, record.started_at, record.finished_at))

    def put_many(self, records: Iterable[RunRecord]) -> None:
        for r in records:
            self.put(r)

    def _rows(self, where: str = "", params: tuple = ()) -> list[RunRecord]:
        cur = self._conn.execute(
            "SELECT * FROM results " + where +
            " ORDER BY model, feature, length, seed, eval_manifest", params)
        out = []
        for row in cur.fetchall():
            key = RunKey(*row[:5])
            result = None if row[6] is None else EvalResult(row[6], row[7], row[8])
            out.append(RunRecord(key, row[5], result, *row[9:]))
        return out

    def records(self, status: str | None = None) -> list[RunRecord]:
        if status is None:
            return self._rows()
        return self._rows("WHERE status=?", (status,))

    def completed_keys(self) -> set[RunKey]:
        return {r.key for r in self.records("done")}

    def failures(self) -> list[RunRecord]:
        return self.records("failed")

    def __len__(self) -> int:
        return self._conn.execute("SELECT COUNT(*) FROM results").fetchone()[0]

    def eval_manifests(self) -> list[str]:
        rows = self._conn.execute(
            "SELECT DISTINCT eval_manifest FROM results WHERE status='done' ORDER BY eval_manifest")
        return [r[0] for r in rows]

    def aggregate(self, eval_manifest: str) -> list[AggregateRow]:
        done = [r for r in self.records("done") if r.key.eval_manifest == eval_manifest]
        if not done:
            raise EmptyStore(f"no completed results for {eval_manifest!r}")
        return aggregate_all(((r.key.model, r.key.feature, r.key.length), r.result) for r in done)

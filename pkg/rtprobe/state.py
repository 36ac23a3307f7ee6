"""
Local state persistence using SQLite.

Stores:
- Pre-mutation snapshots (IRQ masks, partition layout) for rollback
- Experiment runs and per-case outcomes
"""

import json
from datetime import UTC, datetime
from pathlib import Path
from typing import Any

import aiosqlite


class StateDB:
    """
    SQLite-based state management for the toolkit.

    Uses async operations for non-blocking I/O.
    """

    def __init__(self, db_path: Path):
        self.db_path = db_path
        self._conn: aiosqlite.Connection | None = None

    async def __aenter__(self):
        await self.connect()
        return self

    async def __aexit__(self, exc_type, exc_val, exc_tb):
        await self.close()

    async def connect(self):
        """Connect to the database and initialize schema."""
        Path(self.db_path).parent.mkdir(parents=True, exist_ok=True)
        self._conn = await aiosqlite.connect(self.db_path)
        self._conn.row_factory = aiosqlite.Row
        await self._init_schema()

    async def close(self):
        """Close the database connection."""
        if self._conn:
            await self._conn.close()
            self._conn = None

    async def _init_schema(self):
        """Initialize database schema."""
        await self._conn.executescript("""
            CREATE TABLE IF NOT EXISTS snapshots (
                key TEXT PRIMARY KEY,
                value TEXT,
                updated_at TIMESTAMP DEFAULT CURRENT_TIMESTAMP
            );

            CREATE TABLE IF NOT EXISTS runs (
                run_id TEXT PRIMARY KEY,
                plan_name TEXT,
                plan_hash TEXT,
                out_dir TEXT,
                toolkit_version TEXT,
                status TEXT DEFAULT 'running',
                started_at TIMESTAMP,
                ended_at TIMESTAMP
            );

            CREATE TABLE IF NOT EXISTS run_cases (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                run_id TEXT NOT NULL,
                label TEXT NOT NULL,
                repetition INTEGER DEFAULT 0,
                status TEXT NOT NULL,
                error TEXT,
                series_paths TEXT,
                recorded_at TIMESTAMP DEFAULT CURRENT_TIMESTAMP
            );

            CREATE INDEX IF NOT EXISTS idx_run_cases_run
                ON run_cases(run_id);
        """)
        await self._conn.commit()

    # Snapshot methods
    async def get_snapshot(self, key: str) -> Any:
        """Get a snapshot (JSON decoded), None if absent."""
        async with self._conn.execute(
            "SELECT value FROM snapshots WHERE key = ?", (key,)
        ) as cursor:
            row = await cursor.fetchone()
            if row:
                return json.loads(row["value"])
            return None

    async def save_snapshot(self, key: str, value: Any):
        """Set a snapshot (JSON encoded)."""
        await self._conn.execute(
            """
            INSERT INTO snapshots (key, value, updated_at)
            VALUES (?, ?, CURRENT_TIMESTAMP)
            ON CONFLICT(key) DO UPDATE SET
                value = excluded.value,
                updated_at = CURRENT_TIMESTAMP
            """,
            (key, json.dumps(value)),
        )
        await self._conn.commit()

    async def delete_snapshot(self, key: str):
        await self._conn.execute("DELETE FROM snapshots WHERE key = ?", (key,))
        await self._conn.commit()

    # Run ledger methods
    async def record_run_start(
        self,
        run_id: str,
        plan_name: str,
        plan_hash: str,
        out_dir: Path,
        toolkit_version: str,
    ):
        """Register a new experiment run."""
        await self._conn.execute(
            """
            INSERT INTO runs (run_id, plan_name, plan_hash, out_dir, toolkit_version, started_at)
            VALUES (?, ?, ?, ?, ?, ?)
            """,
            (
                run_id,
                plan_name,
                plan_hash,
                str(out_dir),
                toolkit_version,
                datetime.now(UTC).isoformat(),
            ),
        )
        await self._conn.commit()

    async def record_case(
        self,
        run_id: str,
        label: str,
        repetition: int,
        status: str,
        error: str | None = None,
        series_paths: list[str] | None = None,
    ):
        """Log the outcome of one case repetition."""
        await self._conn.execute(
            """
            INSERT INTO run_cases (run_id, label, repetition, status, error, series_paths)
            VALUES (?, ?, ?, ?, ?, ?)
            """,
            (run_id, label, repetition, status, error, json.dumps(series_paths or [])),
        )
        await self._conn.commit()

    async def finish_run(self, run_id: str, status: str):
        await self._conn.execute(
            "UPDATE runs SET status = ?, ended_at = ? WHERE run_id = ?",
            (status, datetime.now(UTC).isoformat(), run_id),
        )
        await self._conn.commit()

    async def list_runs(self, limit: int = 20) -> list[dict]:
        """Most recent runs first."""
        async with self._conn.execute(
            "SELECT * FROM runs ORDER BY started_at DESC LIMIT ?", (limit,)
        ) as cursor:
            rows = await cursor.fetchall()
            return [dict(row) for row in rows]

    async def get_run_cases(self, run_id: str) -> list[dict]:
        async with self._conn.execute(
            "SELECT * FROM run_cases WHERE run_id = ? ORDER BY id", (run_id,)
        ) as cursor:
            rows = await cursor.fetchall()
            cases = []
            for row in rows:
                case = dict(row)
                case["series_paths"] = json.loads(case["series_paths"] or "[]")
                cases.append(case)
            return cases

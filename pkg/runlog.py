"""sqlite registry of training runs and per-image evaluation scores."""
from __future__ import annotations

import math
import sqlite3
from pathlib import Path

DB_PATH = Path("glsr_runs.db")


def get_connection(path: str | Path = DB_PATH) -> sqlite3.Connection:
    conn = sqlite3.connect(path)
    conn.row_factory = sqlite3.Row
    return conn


def init_db(path: str | Path = DB_PATH) -> None:
    """Create the tables if they don't exist."""
    conn = get_connection(path)
    cur = conn.cursor()
    cur.execute(
        """
        CREATE TABLE IF NOT EXISTS runs (
            id INTEGER PRIMARY KEY AUTOINCREMENT,
            variant TEXT NOT NULL,
            channels INTEGER NOT NULL,
            blocks INTEGER NOT NULL,
            scale INTEGER NOT NULL,
            params INTEGER NOT NULL,
            steps INTEGER NOT NULL,
            final_loss REAL,
            checkpoint TEXT,
            wall_time_s REAL,
            created_at TEXT NOT NULL DEFAULT CURRENT_TIMESTAMP
        )
        """
    )
    cur.execute(
        """
        CREATE TABLE IF NOT EXISTS evals (
            id INTEGER PRIMARY KEY AUTOINCREMENT,
            run_id INTEGER REFERENCES runs(id),
            dataset TEXT NOT NULL,
            image TEXT NOT NULL,
            psnr REAL,
            ssim REAL NOT NULL
        )
        """
    )
    conn.commit()
    conn.close()


def record_run(
    path: str | Path,
    *,
    variant: str,
    channels: int,
    blocks: int,
    scale: int,
    params: int,
    steps: int,
    final_loss: float | None = None,
    checkpoint: str | None = None,
    wall_time_s: float | None = None,
) -> int:
    conn = get_connection(path)
    cur = conn.cursor()
    cur.execute(
        """
        INSERT INTO runs (variant, channels, blocks, scale, params, steps, final_loss, checkpoint, wall_time_s)
        VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?)
        """,
        (variant, channels, blocks, scale, params, steps, final_loss, checkpoint, wall_time_s),
    )
    conn.commit()
    run_id = int(cur.lastrowid)
    conn.close()
    return run_id


def record_eval(path: str | Path, run_id: int | None, dataset: str, image: str, psnr: float, ssim: float) -> None:
    # infinite PSNR (identical images) is stored as NULL
    conn = get_connection(path)
    conn.execute(
        "INSERT INTO evals (run_id, dataset, image, psnr, ssim) VALUES (?, ?, ?, ?, ?)",
        (run_id, dataset, image, None if math.isinf(psnr) else float(psnr), float(ssim)),
    )
    conn.commit()
    conn.close()


def recent_runs(path: str | Path = DB_PATH, limit: int = 20) -> list[dict]:
    conn = get_connection(path)
    cur = conn.cursor()
    cur.execute(
        """
        SELECT id, variant, channels, blocks, scale, params, steps, final_loss, checkpoint, wall_time_s, created_at
        FROM runs
        ORDER BY id DESC
        LIMIT ?
        """,
        (int(limit),),
    )
    rows = [dict(r) for r in cur.fetchall()]
    conn.close()
    return rows


def run_evals(path: str | Path, run_id: int) -> list[dict]:
    conn = get_connection(path)
    cur = conn.cursor()
    cur.execute(
        "SELECT dataset, image, psnr, ssim FROM evals WHERE run_id = ? ORDER BY id",
        (run_id,),
    )
    rows = [dict(r) for r in cur.fetchall()]
    conn.close()
    for r in rows:
        if r["psnr"] is None:
            r["psnr"] = math.inf
    return rows

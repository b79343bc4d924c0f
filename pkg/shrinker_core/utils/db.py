"""
Run Registry - SQLite record of CLI runs, their step outputs and events
"""
import sqlite3
import json
import os
import uuid
from typing import Dict, Any, Optional, List
from contextlib import contextmanager

DEFAULT_DB_PATH = os.path.join(os.path.dirname(os.path.dirname(__file__)), 'data', 'runs.db')
RUN_NAMESPACE = uuid.UUID('6b1f7a52-3d0e-4c55-9a43-5f0d3c2e8b71')


def get_db_path() -> str:
    """Registry location; SHRINKER_DB_PATH overrides the default"""
    return os.getenv('SHRINKER_DB_PATH') or DEFAULT_DB_PATH


@contextmanager
def get_connection():
    """Context manager for database connections"""
    conn = sqlite3.connect(get_db_path())
    conn.row_factory = sqlite3.Row
    try:
        yield conn
        conn.commit()
    except Exception:
        conn.rollback()
        raise
    finally:
        conn.close()


def init_database() -> None:
    """Initialize database with schema"""
    os.makedirs(os.path.dirname(os.path.abspath(get_db_path())), exist_ok=True)

    with get_connection() as conn:
        cursor = conn.cursor()

        cursor.execute('''
            CREATE TABLE IF NOT EXISTS runs (
                id TEXT PRIMARY KEY,
                command TEXT NOT NULL,
                status TEXT DEFAULT 'running',
                config_json TEXT NOT NULL,
                created_at TIMESTAMP DEFAULT CURRENT_TIMESTAMP,
                updated_at TIMESTAMP DEFAULT CURRENT_TIMESTAMP
            )
        ''')

        cursor.execute('''
            CREATE TABLE IF NOT EXISTS run_outputs (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                run_id TEXT NOT NULL,
                step TEXT NOT NULL,
                output_json TEXT NOT NULL,
                created_at TIMESTAMP DEFAULT CURRENT_TIMESTAMP,
                FOREIGN KEY (run_id) REFERENCES runs(id)
            )
        ''')

        cursor.execute('''
            CREATE TABLE IF NOT EXISTS audit_log (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                run_id TEXT NOT NULL,
                event_type TEXT NOT NULL,
                metadata TEXT,
                timestamp TIMESTAMP DEFAULT CURRENT_TIMESTAMP,
                FOREIGN KEY (run_id) REFERENCES runs(id)
            )
        ''')

        cursor.execute('CREATE INDEX IF NOT EXISTS idx_run_status ON runs(status)')
        cursor.execute('CREATE INDEX IF NOT EXISTS idx_run_outputs_run ON run_outputs(run_id, step)')
        cursor.execute('CREATE INDEX IF NOT EXISTS idx_audit_log_run ON audit_log(run_id)')


def canonical_json(data: Dict[str, Any]) -> str:
    """Key-sorted JSON used for hashing and storage"""
    return json.dumps(data, sort_keys=True, default=str)


def make_run_id(command: str, config: Dict[str, Any]) -> str:
    """Deterministic run id of a command and its configuration"""
    return str(uuid.uuid5(RUN_NAMESPACE, f"{command}:{canonical_json(config)}"))


def create_run(run_id: str, command: str, config: Dict[str, Any]) -> None:
    """Create (or restart) a run entry"""
    with get_connection() as conn:
        cursor = conn.cursor()
        cursor.execute('''
            INSERT OR REPLACE INTO runs (id, command, status, config_json)
            VALUES (?, ?, 'running', ?)
        ''', (run_id, command, canonical_json(config)))


def update_run_status(run_id: str, status: str) -> None:
    """Update the status of a run"""
    with get_connection() as conn:
        cursor = conn.cursor()
        cursor.execute('''
            UPDATE runs
            SET status = ?, updated_at = CURRENT_TIMESTAMP
            WHERE id = ?
        ''', (status, run_id))


def save_run_output(run_id: str, step: str, data: Dict[str, Any]) -> None:
    """Save output from one step of a run"""
    with get_connection() as conn:
        cursor = conn.cursor()
        cursor.execute('''
            INSERT INTO run_outputs (run_id, step, output_json)
            VALUES (?, ?, ?)
        ''', (run_id, step, canonical_json(data)))


def get_run_outputs(run_id: str) -> Dict[str, Dict[str, Any]]:
    """Retrieve the latest output of every step of a run"""
    with get_connection() as conn:
        cursor = conn.cursor()
        cursor.execute('''
            SELECT step, output_json FROM run_outputs
            WHERE run_id = ?
            ORDER BY id DESC
        ''', (run_id,))

        outputs = {}
        for row in cursor.fetchall():
            if row['step'] not in outputs:
                outputs[row['step']] = json.loads(row['output_json'])
        return outputs


def get_run(run_id: str) -> Optional[Dict[str, Any]]:
    """Get a run record with its configuration decoded"""
    with get_connection() as conn:
        cursor = conn.cursor()
        cursor.execute('SELECT * FROM runs WHERE id = ?', (run_id,))

        row = cursor.fetchone()
        if not row:
            return None

        record = dict(row)
        record['config'] = json.loads(record.pop('config_json'))
        return record


def log_audit_event(
    run_id: str,
    event_type: str,
    metadata: Optional[Dict[str, Any]] = None
) -> None:
    """Log an audit event"""
    with get_connection() as conn:
        cursor = conn.cursor()
        cursor.execute('''
            INSERT INTO audit_log (run_id, event_type, metadata)
            VALUES (?, ?, ?)
        ''', (run_id, event_type, canonical_json(metadata) if metadata else None))


def get_audit_log(run_id: str) -> List[Dict[str, Any]]:
    """Retrieve audit log for a run"""
    with get_connection() as conn:
        cursor = conn.cursor()
        cursor.execute('''
            SELECT * FROM audit_log
            WHERE run_id = ?
            ORDER BY id ASC
        ''', (run_id,))

        return [dict(row) for row in cursor.fetchall()]


def list_runs(status: Optional[str] = None, limit: int = 50) -> List[Dict[str, Any]]:
    """List runs with optional status filter"""
    with get_connection() as conn:
        cursor = conn.cursor()

        if status:
            cursor.execute('''
                SELECT id, command, status, created_at, updated_at FROM runs
                WHERE status = ?
                ORDER BY updated_at DESC
                LIMIT ?
            ''', (status, limit))
        else:
            cursor.execute('''
                SELECT id, command, status, created_at, updated_at FROM runs
                ORDER BY updated_at DESC
                LIMIT ?
            ''', (limit,))

        return [dict(row) for row in cursor.fetchall()]

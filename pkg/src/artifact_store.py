"""
Run index and table output for chainlab.
Handles JSON operations with atomic writes and ISO 8601 timestamps.
"""

import csv
import json
import math
import os
import shutil
from datetime import datetime, timezone
from typing import Any, Dict, List, Optional, Sequence
from uuid import uuid4

try:
    from filelock import FileLock
except ImportError:
    print("Error: 'filelock' package not installed. Please run: pip install -r requirements.txt")
    raise

from dateutil.parser import isoparse

from src.logger import get_logger, resolve_output_dir

logger = get_logger()


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return str(value)
    if isinstance(value, float):
        return format(value, ".17g")
    if hasattr(value, "item"):
        return _format_value(value.item())
    return str(value)


def _parse_value(text: str) -> Any:
    if text in ("True", "False"):
        return text == "True"
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def _json_default(value: Any) -> Any:
    if hasattr(value, "tolist"):
        return value.tolist()
    if hasattr(value, "item"):
        return value.item()
    raise TypeError(f"not JSON serialisable: {type(value).__name__}")


def _jsonable(value: Any) -> Any:
    """Plain Python values; non-finite floats become strings so the JSON stays standard."""
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if hasattr(value, "tolist"):
        return _jsonable(value.tolist())
    if isinstance(value, float) and not math.isfinite(value):
        return str(value)
    return value


def emit_table(rows: Sequence[Dict[str, Any]], path: str, fmt: Optional[str] = None,
               columns: Optional[Sequence[str]] = None,
               provenance: Optional[Dict[str, Any]] = None) -> str:
    """
    Write rows as CSV or JSON.

    Args:
        rows: Records sharing the same keys
        path: Output file; the suffix picks the format when fmt is None
        fmt: "csv" or "json"
        columns: Column order; defaults to the key order of the first row
        provenance: Resolved config and version tag embedded in the file

    Returns:
        path: The file written
    """
    fmt = fmt or ("json" if path.endswith(".json") else "csv")
    if fmt not in ("csv", "json"):
        raise ValueError(f"unknown table format: {fmt}")
    columns = list(columns) if columns is not None else (list(rows[0].keys()) if rows else [])
    provenance = provenance or {}
    temp_file = f"{path}.tmp"
    try:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(temp_file, "w", encoding="utf-8", newline="") as f:
            if fmt == "json":
                body = {"provenance": _jsonable(provenance),
                        "rows": [{c: _jsonable(row.get(c)) for c in columns} for row in rows]}
                json.dump(body, f, indent=2, default=_json_default)
            else:
                for key, value in provenance.items():
                    f.write(f"# {key}: {json.dumps(_jsonable(value), default=_json_default, sort_keys=True)}\n")
                writer = csv.writer(f)
                writer.writerow(columns)
                for row in rows:
                    writer.writerow([_format_value(row.get(c, "")) for c in columns])
        os.replace(temp_file, path)
        logger.info(f"Wrote {len(rows)} rows to {path}")
        return path
    except Exception as e:
        logger.error(f"Failed to write table {path}: {str(e)}")
        if os.path.exists(temp_file):
            try:
                os.remove(temp_file)
            except OSError as cleanup_error:
                logger.error(f"Failed to clean up temporary file: {str(cleanup_error)}")
        raise


def read_table(path: str) -> Dict[str, Any]:
    """Read back a table written by emit_table as {"provenance", "columns", "rows"}."""
    try:
        if path.endswith(".json"):
            with open(path, "r", encoding="utf-8") as f:
                body = json.load(f)
            rows = body.get("rows", [])
            return {"provenance": body.get("provenance", {}),
                    "columns": list(rows[0].keys()) if rows else [], "rows": rows}
        provenance: Dict[str, Any] = {}
        with open(path, "r", encoding="utf-8", newline="") as f:
            lines = f.read().splitlines()
        body_lines = []
        for line in lines:
            if line.startswith("# ") and not body_lines:
                key, _, value = line[2:].partition(": ")
                provenance[key] = json.loads(value)
            else:
                body_lines.append(line)
        reader = csv.reader(body_lines)
        columns = next(reader, [])
        rows = [{c: _parse_value(v) for c, v in zip(columns, record)} for record in reader]
        return {"provenance": provenance, "columns": columns, "rows": rows}
    except Exception as e:
        logger.error(f"Failed to read table {path}: {str(e)}")
        raise


class ArtifactStore:
    def __init__(self, root: Optional[str] = None):
        """Initialize the store under the output directory."""
        try:
            self.root = root or resolve_output_dir()
            self.index_file = os.path.join(self.root, "runs.json")
            self.lock_file = f"{self.index_file}.lock"
            self._lock = FileLock(self.lock_file)

            if not os.path.exists(self.root):
                os.makedirs(self.root)
                logger.info(f"Created output directory: {self.root}")

            if not os.path.exists(self.index_file):
                self._initialize_index()

        except Exception as e:
            logger.error(f"Failed to initialize ArtifactStore: {str(e)}")
            raise

    def path(self, *parts: str) -> str:
        return os.path.join(self.root, *parts)

    def _initialize_index(self) -> None:
        try:
            with self._lock:
                with open(self.index_file, "w", encoding="utf-8") as f:
                    json.dump({"runs": []}, f, indent=2)
                logger.info(f"Initialized run index: {self.index_file}")
        except Exception as e:
            logger.error(f"Failed to initialize run index: {str(e)}")
            raise

    def _read_index(self) -> Dict[str, List[Dict[str, Any]]]:
        try:
            with self._lock:
                if not os.path.exists(self.index_file):
                    logger.warning("Run index not found, creating new one")
                    self._initialize_index()

                with open(self.index_file, "r", encoding="utf-8") as f:
                    return json.load(f)
        except json.JSONDecodeError as e:
            logger.error(f"Invalid JSON in run index: {str(e)}")
            backup_file = f"{self.index_file}.backup"
            shutil.copy2(self.index_file, backup_file)
            logger.info(f"Backed up corrupted index to: {backup_file}")
            self._initialize_index()
            return {"runs": []}
        except Exception as e:
            logger.error(f"Failed to read run index: {str(e)}")
            raise

    def _write_index(self, data: Dict[str, List[Dict[str, Any]]]) -> None:
        temp_file = f"{self.index_file}.tmp"
        try:
            with self._lock:
                with open(temp_file, "w", encoding="utf-8") as f:
                    json.dump(data, f, indent=2, default=_json_default)
                os.replace(temp_file, self.index_file)
        except Exception as e:
            logger.error(f"Failed to write run index: {str(e)}")
            if os.path.exists(temp_file):
                try:
                    os.remove(temp_file)
                except OSError as cleanup_error:
                    logger.error(f"Failed to clean up temporary file: {str(cleanup_error)}")
            raise

    def record_run(self, subcommand: str, config: Dict[str, Any], files: Sequence[str],
                   run_id: Optional[str] = None, status: str = "ok") -> str:
        """Append a run to the index and return its id."""
        try:
            run_id = run_id or str(uuid4())
            entry = {
                "run_id": run_id,
                "timestamp": datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%S.%fZ"),
                "subcommand": subcommand,
                "status": status,
                "config": _jsonable(config),
                "files": list(files),
            }
            with self._lock:
                data = self._read_index()
                data["runs"].append(entry)
                self._write_index(data)
            logger.info(f"Recorded run {run_id} ({subcommand})")
            return run_id
        except Exception as e:
            logger.error(f"Failed to record run: {str(e)}")
            raise

    def get_run(self, run_id: str) -> Optional[Dict[str, Any]]:
        for run in self._read_index()["runs"]:
            if run["run_id"] == run_id:
                return run
        logger.warning(f"Run not found: {run_id}")
        return None

    def get_all_runs(self) -> List[Dict[str, Any]]:
        return self._read_index()["runs"]

    def latest_run(self, subcommand: Optional[str] = None) -> Optional[Dict[str, Any]]:
        runs = [r for r in self.get_all_runs() if subcommand is None or r["subcommand"] == subcommand]
        if not runs:
            return None
        return max(runs, key=lambda r: isoparse(r["timestamp"]))

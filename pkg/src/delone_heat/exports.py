"""Export utilities for delone-heat artifacts.

Every stage hands its results to the next one through the JSON and CSV
files written here, so formatting is fixed: JSON keys are sorted and floats
keep full precision, CSV floats carry 17 significant digits.
"""

import csv
import json
import math
from pathlib import Path
from typing import Any

from .exceptions import ExportError
from .logging import get_logger

logger = get_logger(__name__)


def _jsonable(value: Any) -> Any:
    if isinstance(value, float) and not math.isfinite(value):
        return "inf" if value > 0 else ("-inf" if value < 0 else "nan")
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, list | tuple):
        return [_jsonable(v) for v in value]
    if hasattr(value, "item") and callable(value.item):  # numpy scalars
        return _jsonable(value.item())
    return value


def format_cell(value: Any) -> str:
    """Render one CSV cell; floats keep 17 significant digits."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if hasattr(value, "item") and callable(value.item):
        value = value.item()
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def export_to_json(data: list[Any] | dict[str, Any], file_path: Path) -> None:
    """Export data to a JSON file.

    Args:
        data: Data to export.
        file_path: Destination path.

    Raises:
        ExportError: If the file cannot be written.

    """
    try:
        file_path.parent.mkdir(parents=True, exist_ok=True)
        with open(file_path, "w", encoding="utf-8") as f:
            json.dump(_jsonable(data), f, indent=2, sort_keys=True)
            f.write("\n")
        logger.debug("exported JSON", path=str(file_path))
    except OSError as e:
        logger.error("failed to export JSON", path=str(file_path), error=str(e))
        raise ExportError(f"cannot write {file_path}: {e}")


def export_to_csv(data: list[dict[str, Any]], file_path: Path, fieldnames: list[str] | None = None) -> None:
    """Export a list of dictionaries to a CSV file.

    Args:
        data: List of dictionaries with consistent keys.
        file_path: Destination path.
        fieldnames: Column order; taken from the first row when omitted.

    Raises:
        ExportError: If there is nothing to infer a header from, or on I/O failure.

    """
    if not data and fieldnames is None:
        raise ExportError(f"no rows and no header for {file_path}")

    keys = fieldnames if fieldnames is not None else list(data[0].keys())
    try:
        file_path.parent.mkdir(parents=True, exist_ok=True)
        with open(file_path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(keys)
            for row in data:
                writer.writerow([format_cell(row[k]) for k in keys])
        logger.debug("exported CSV", path=str(file_path), rows=len(data))
    except OSError as e:
        logger.error("failed to export CSV", path=str(file_path), error=str(e))
        raise ExportError(f"cannot write {file_path}: {e}")


def read_json(file_path: Path) -> Any:
    """Read a JSON artifact."""
    try:
        with open(file_path, encoding="utf-8") as f:
            return json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ExportError(f"cannot read {file_path}: {e}")


def read_csv_rows(file_path: Path) -> list[dict[str, str]]:
    """Read a CSV artifact as a list of string dictionaries."""
    try:
        with open(file_path, newline="", encoding="utf-8") as f:
            return list(csv.DictReader(f))
    except OSError as e:
        raise ExportError(f"cannot read {file_path}: {e}")

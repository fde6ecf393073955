import csv
import io
import json
import logging
import math
import os
import sys
from typing import Dict, List, Sequence

from config import CSV_FLOAT_FORMAT

logger = logging.getLogger(__name__)


def format_value(value) -> str:
    """Text form of a table cell: floats with 17 significant digits."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return format(value, CSV_FLOAT_FORMAT)
    return str(value)


def _json_value(value):
    if isinstance(value, float) and not math.isfinite(value):
        return format_value(value)
    if hasattr(value, "item"):
        return value.item()
    return value


def render_csv(rows: Sequence[Dict[str, object]], columns: Sequence[str] = None) -> str:
    columns = list(columns or (rows[0].keys() if rows else []))
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([format_value(row.get(c)) for c in columns])
    return buffer.getvalue()


def render_json(rows: Sequence[Dict[str, object]], columns: Sequence[str] = None) -> str:
    columns = list(columns or (rows[0].keys() if rows else []))
    records = [{c: _json_value(row.get(c)) for c in columns} for row in rows]
    return json.dumps({"columns": columns, "rows": records}, indent=1) + "\n"


def write_rows(rows: List[Dict[str, object]], out: str = "-", fmt: str = "csv", columns: Sequence[str] = None) -> None:
    """Writes rows to ``out`` ("-" for stdout) as CSV or JSON."""
    text = render_csv(rows, columns) if fmt == "csv" else render_json(rows, columns)
    if out == "-":
        sys.stdout.write(text)
        sys.stdout.flush()
        return
    directory = os.path.dirname(out)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(out, "w", encoding="utf-8", newline="") as f:
        f.write(text)
    logger.info("Wrote %d rows to %s (%s)", len(rows), out, fmt)


def write_error_record(record: Dict[str, object]) -> None:
    """One JSON line on stderr per failure."""
    sys.stderr.write(json.dumps({k: _json_value(v) for k, v in record.items()}) + "\n")
    sys.stderr.flush()

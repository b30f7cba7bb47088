"""
Run artifacts: the metrics time series (CSV or JSON) and summary.json.

Output is byte-deterministic for a fixed scenario, seed and format.
"""

import csv
import json
import logging
import os
from typing import Any, Dict, List, Optional, Sequence

from .errors import ConfigurationError
from .sim_kernel import MetricRow, MetricsReport

logger = logging.getLogger(__name__)

CSV_HEADER = ("time_s", "node_id", "metric", "value")
FORMATS = ("csv", "json")


def format_value(value: Optional[float]) -> str:
    """Shortest round-tripping text for a float; empty for a missing value."""
    if value is None:
        return ""
    return repr(float(value))


def format_time(t: float) -> str:
    return f"{t:.6f}"


def write_metrics_csv(rows: Sequence[MetricRow], path: str):
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for row in rows:
            writer.writerow((format_time(row.time_s), row.node_id, row.metric, format_value(row.value)))


def write_metrics_json(rows: Sequence[MetricRow], path: str):
    records = [
        {"time_s": round(row.time_s, 6), "node_id": row.node_id, "metric": row.metric, "value": row.value}
        for row in rows
    ]
    with open(path, "w", encoding="utf-8") as f:
        json.dump(records, f, indent=2)
        f.write("\n")


def write_summary(summary: Dict[str, Any], path: str):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write("\n")


def artifact_names(fmt: str, suffix: str = "") -> Dict[str, str]:
    return {
        "metrics": f"metrics{suffix}.{fmt}",
        "summary": f"summary{suffix}.json",
    }


def write_report(report: MetricsReport, out_dir: str, fmt: str = "csv", suffix: str = "") -> List[str]:
    """
    Write the metrics and summary files of one run.

    Args:
        report: Result of a simulation run
        out_dir: Output directory (created if missing)
        fmt: 'csv' or 'json' for the time series
        suffix: Appended to file stems, e.g. '_seed7' for multi-seed runs

    Returns:
        Paths of the files written
    """
    if fmt not in FORMATS:
        raise ConfigurationError(f"Unknown metrics format '{fmt}' (expected csv or json)")
    os.makedirs(out_dir, exist_ok=True)
    names = artifact_names(fmt, suffix)
    metrics_path = os.path.join(out_dir, names["metrics"])
    summary_path = os.path.join(out_dir, names["summary"])

    if fmt == "csv":
        write_metrics_csv(report.rows, metrics_path)
    else:
        write_metrics_json(report.rows, metrics_path)
    write_summary(report.summary, summary_path)
    logger.info("Wrote %s and %s", metrics_path, summary_path)
    return [metrics_path, summary_path]

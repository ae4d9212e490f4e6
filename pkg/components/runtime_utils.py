#!/usr/bin/env python3
"""
Runtime utilities - logging setup, output directories, report writers, hashing
"""

import csv
import hashlib
import json
import logging
import math
import time
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Sequence

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

# Maximum number of entries listed when an output directory is reused
MAX_DIAGNOSTIC_ITEMS = 20


def setup_logging(level: str = "INFO"):
    """
    Configure the root logger once
    This should be called at application startup
    """
    root = logging.getLogger()
    if not root.handlers:
        logging.basicConfig(level=level, format=LOG_FORMAT)
    root.setLevel(level)


def prepare_output_dir(path, progress_callback=None) -> Path:
    """
    Create the output directory if needed

    Args:
        path: directory to create
        progress_callback: Optional callable that takes a string message to report progress

    Returns:
        Path: the directory
    """
    out = Path(path)
    if out.exists() and any(out.iterdir()):
        items = sorted(p.name for p in out.iterdir())
        shown = ", ".join(items[:MAX_DIAGNOSTIC_ITEMS])
        more = f" ... and {len(items) - MAX_DIAGNOSTIC_ITEMS} more" if len(items) > MAX_DIAGNOSTIC_ITEMS else ""
        _log(f"Reusing output directory {out} ({shown}{more})", progress_callback)
    out.mkdir(parents=True, exist_ok=True)
    return out


def file_sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _plain(value: Any) -> Any:
    """JSON-safe copy: NaN/inf become null, tuples become lists, keys become strings"""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if hasattr(value, "item") and callable(value.item):
        return _plain(value.item())
    return value


def write_json(path, data: Dict[str, Any]) -> Path:
    path = Path(path)
    path.write_text(json.dumps(_plain(data), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(["" if v is None else (f"{v:.4f}" if isinstance(v, float) else v)
                             for v in _plain(list(row))])
    return path


class JsonlLog:
    """
    Line-oriented structured training log

    Each record has timestamp, event, epoch, video, loss and metric; with
    timestamps disabled the timestamp is null so logs diff byte-for-byte.
    """

    def __init__(self, path, timestamps: bool = True, append: bool = False):
        self.path = Path(path)
        self.timestamps = timestamps
        if not append:
            self.path.write_text("", encoding="utf-8")

    def record(self, event: str, epoch: Optional[int] = None, video: Optional[str] = None,
               loss: Optional[float] = None, metric: Optional[Dict[str, Any]] = None):
        entry = {
            "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S") if self.timestamps else None,
            "event": event,
            "epoch": epoch,
            "video": video,
            "loss": loss,
            "metric": metric,
        }
        with open(self.path, "a", encoding="utf-8") as f:
            f.write(json.dumps(_plain(entry), sort_keys=True) + "\n")


def _log(message: str, callback=None):
    if callback:
        callback(message)
    else:
        logging.getLogger(__name__).info(message)

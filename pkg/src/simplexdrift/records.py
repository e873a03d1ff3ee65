"""File formats: line-delimited records, single-document configs, CSV tables.

Every real number is written with 12 significant digits.  Non-finite floats
are written as ``null``; readers restore the meaning from context (an
infinite log-barrier is always accompanied by a violation list, an infinite
step-to-boundary by the ``inward-infinite`` outcome).
"""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path
from typing import Callable, Iterable, Iterator, Mapping

import numpy as np

from .errors import SchemaError
from .lineage import LineageEvent
from .monitor import DriftReport, MonitorConfig, Observation

SIG_DIGITS = 12


def round_number(x):
    return float(f"{x:.{SIG_DIGITS}g}")


def normalize(obj):
    """Recursively round floats to 12 significant digits, map non-finite to None."""
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return round_number(x) if math.isfinite(x) else None
    if isinstance(obj, Mapping):
        return {str(k): normalize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [normalize(v) for v in obj]
    return obj


def dumps(obj) -> str:
    return json.dumps(normalize(obj), allow_nan=False, ensure_ascii=False)


def write_jsonl(path, records: Iterable[Mapping]):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(dumps(r) + "\n")


def write_json(path, obj):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(normalize(obj), indent=2, allow_nan=False, ensure_ascii=False) + "\n")


def read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON: {exc.msg}", line=exc.lineno, path=path) from None


def iter_jsonl(path, parse: Callable[[Mapping], object]) -> Iterator:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"invalid JSON: {exc.msg}", line=lineno, path=path) from None
            if not isinstance(raw, dict):
                raise SchemaError("each line must be a JSON object", line=lineno, path=path)
            try:
                yield lineno, parse(raw)
            except SchemaError:
                raise
            except (KeyError, TypeError, ValueError) as exc:
                detail = f"missing field {exc}" if isinstance(exc, KeyError) else str(exc)
                raise SchemaError(detail, line=lineno, path=path) from None


def _parse_observation(d):
    if not isinstance(d.get("parts"), dict):
        raise ValueError("'parts' must be an object of part id to value")
    return Observation.from_dict(d)


def read_observations(path) -> list[Observation]:
    out = []
    last = None
    for lineno, obs in iter_jsonl(path, _parse_observation):
        if last is not None and obs.t <= last:
            raise SchemaError(f"observations must be sorted by t (t={obs.t} after t={last})", line=lineno, path=path)
        last = obs.t
        out.append(obs)
    return out


def read_lineage(path) -> list[LineageEvent]:
    events = [ev for _, ev in iter_jsonl(path, LineageEvent.from_dict)]
    return events


def read_reports(path) -> list[DriftReport]:
    return [r for _, r in iter_jsonl(path, DriftReport.from_dict)]


def load_config(path) -> MonitorConfig:
    return MonitorConfig.from_dict(read_json(path))


def write_csv(path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow(["" if v is None else (f"{v:.{SIG_DIGITS}g}" if isinstance(v, float) else v) for v in row])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")

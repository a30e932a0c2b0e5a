"""Plain-text output: CSV fields and tables with '#' metadata lines, sorted JSON.

Floats are written with 17 significant digits, enough to read every double
back bit for bit.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1


def _fmt(v) -> str:
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return format(v, ".17g")


def _meta_lines(meta: dict | None) -> list[str]:
    lines = []
    for key, value in (meta or {}).items():
        text = value if isinstance(value, str) else json.dumps(value, sort_keys=True,
                                                               default=_json_default)
        for part in str(text).splitlines() or [""]:
            lines.append(f"# {key}: {part}")
    return lines


def _parse_meta(lines: list[str]) -> dict:
    meta: dict = {}
    for line in lines:
        body = line[1:].strip()
        if ":" not in body:
            continue
        key, value = body.split(":", 1)
        key, value = key.strip(), value.strip()
        meta[key] = meta[key] + "\n" + value if key in meta else value
    return meta


def write_field_csv(path, values, meta: dict | None = None) -> Path:
    """One CSV row per grid row; ``meta`` entries become leading '#' lines."""
    path = Path(path)
    arr = np.atleast_2d(np.asarray(values, dtype=float))
    with path.open("w", newline="") as fh:
        for line in _meta_lines(meta):
            fh.write(line + "\n")
        writer = csv.writer(fh)
        for row in arr:
            writer.writerow([_fmt(v) for v in row])
    return path


def read_field_csv(path) -> tuple[np.ndarray, dict]:
    comments, rows = [], []
    with Path(path).open(newline="") as fh:
        for line in fh:
            if line.startswith("#"):
                comments.append(line.rstrip("\n"))
            elif line.strip():
                rows.append([float(x) for x in next(csv.reader([line]))])
    return np.array(rows, dtype=float), _parse_meta(comments)


def write_table_csv(path, columns: dict, meta: dict | None = None) -> Path:
    """Columns of equal length under a header row."""
    path = Path(path)
    names = list(columns)
    data = [np.asarray(columns[n]).ravel() for n in names]
    if len({len(d) for d in data}) > 1:
        raise ValueError("columns differ in length")
    with path.open("w", newline="") as fh:
        for line in _meta_lines(meta):
            fh.write(line + "\n")
        writer = csv.writer(fh)
        writer.writerow(names)
        for row in zip(*data):
            writer.writerow([_fmt(v) for v in row])
    return path


def read_table_csv(path) -> tuple[dict, dict]:
    comments, lines = [], []
    with Path(path).open(newline="") as fh:
        for line in fh:
            (comments if line.startswith("#") else lines).append(line.rstrip("\n"))
    reader = csv.reader([ln for ln in lines if ln.strip()])
    header = next(reader)
    cols = [[] for _ in header]
    for row in reader:
        for c, v in zip(cols, row):
            c.append(float(v))
    return {n: np.array(c) for n, c in zip(header, cols)}, _parse_meta(comments)


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, Path):
        return str(obj)
    if hasattr(obj, "__dataclass_fields__"):
        return asdict(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, default=_json_default, allow_nan=True)


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(dumps(obj) + "\n")
    return path


@dataclass
class RunManifest:
    subcommand: str
    config_path: str | None
    out_dir: str
    seed: int
    runs: int | None
    config_text: str = ""
    format_version: int = FORMAT_VERSION
    extra: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return asdict(self)

    @property
    def digest(self) -> str:
        """SHA-256 of the canonical JSON form; stamped into every output file."""
        return hashlib.sha256(json.dumps(self.as_dict(), sort_keys=True,
                                         default=_json_default).encode()).hexdigest()

    def stamp(self, meta: dict | None = None) -> dict:
        """Metadata for an output file: the manifest hash first, then ``meta``."""
        return {"manifest": self.digest, "format_version": self.format_version, **(meta or {})}

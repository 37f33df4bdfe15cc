"""Result files: CSV / JSON-lines with round-trip float formatting, and run manifests."""

from __future__ import annotations

import csv
import json
import math
import platform
from pathlib import Path

from . import __version__


def fmt(v) -> str:
    """Shortest decimal string that parses back to the same double; '' for missing."""
    if v is None:
        return ""
    if isinstance(v, (bool, str)):
        return str(v)
    if isinstance(v, int):
        return str(v)
    return repr(float(v))


def jsonable(v):
    if isinstance(v, dict):
        return {str(k): jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [jsonable(x) for x in v]
    if hasattr(v, "item") and not isinstance(v, (str, bytes)):
        v = v.item()
    if isinstance(v, float) and not math.isfinite(v):
        return str(v)
    return v


def write_csv(path, header, rows, comments=()) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        for c in comments:
            fh.write(f"# {c}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) for v in r])
    return path


def read_csv(path):
    """(comment lines, header, rows as lists of strings)."""
    comments, lines = [], []
    with Path(path).open(newline="") as fh:
        for line in fh:
            if line.startswith("#"):
                comments.append(line[1:].strip())
            else:
                lines.append(line)
    rows = list(csv.reader(lines))
    return comments, rows[0], rows[1:]


def write_jsonl(path, records) -> Path:
    path = Path(path)
    with path.open("w") as fh:
        for r in records:
            fh.write(json.dumps(jsonable(r), sort_keys=False) + "\n")
    return path


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(json.dumps(jsonable(obj), indent=2) + "\n")
    return path


def write_manifest(out_dir, command, argv, config_digest, seeds, wall_time, outputs,
                   extra=None) -> Path:
    man = {
        "command": command,
        "argv": list(argv),
        "config_sha256": config_digest,
        "version": __version__,
        "python": platform.python_version(),
        "seeds": seeds,
        "wall_time_seconds": wall_time,
        "outputs": [str(p) for p in outputs],
    }
    if extra:
        man["extra"] = extra
    return write_json(Path(out_dir) / f"{command}.manifest.json", man)

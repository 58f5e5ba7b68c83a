"""CSV/JSON writers and run manifests.

CSV cells are written with ``repr`` for floats so identical runs produce
byte-identical files. The optional first line ``# generated <UTC time>`` is
the only run-dependent content.
"""

from __future__ import annotations

import csv
import enum
import hashlib
import io
import json
import platform
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from . import FORMAT_VERSION, __version__


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, enum.Enum):
        return str(v.value)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def timestamp() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def csv_text(rows: Sequence[dict], fields: Optional[Sequence[str]] = None, stamp: bool = False) -> str:
    if fields is None:
        fields = list(rows[0]) if rows else []
    buf = io.StringIO()
    if stamp:
        buf.write(f"# generated {timestamp()}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fields)
    for r in rows:
        w.writerow([_cell(r.get(f)) for f in fields])
    return buf.getvalue()


def write_csv(path, rows: Sequence[dict], fields=None, stamp: bool = False) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(csv_text(rows, fields, stamp))
    return path


def read_csv(path) -> list:
    lines = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def _jsonable(o):
    if isinstance(o, enum.Enum):
        return o.value
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def to_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n"


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(to_json(obj))
    return path


def digest(obj) -> str:
    canon = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_jsonable)
    return hashlib.sha256(canon.encode()).hexdigest()


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(
    out_dir,
    command: str,
    config: dict,
    seed: Optional[int],
    outputs: Iterable,
    inputs: Iterable = (),
    stamp: bool = True,
) -> Path:
    manifest = {
        "version": FORMAT_VERSION,
        "command": command,
        "config_hash": digest(config),
        "seed": seed,
        "inputs": {str(p): file_digest(p) for p in inputs},
        "outputs": sorted(Path(p).name for p in outputs),
        "versions": {
            "crexlab": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
        },
    }
    if stamp:
        manifest["created"] = timestamp()
    return write_json(Path(out_dir) / "manifest.json", manifest)

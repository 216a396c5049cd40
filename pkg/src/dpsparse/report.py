"""Run manifests, config hashing and CSV output shared by every experiment."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from . import __version__


def _normalize(obj):
    if isinstance(obj, bool) or obj is None or isinstance(obj, str):
        return obj
    if isinstance(obj, int):
        return obj
    if isinstance(obj, float):
        if math.isfinite(obj) and obj == int(obj) and abs(obj) < 2 ** 53:
            return int(obj)
        return repr(obj)
    if isinstance(obj, dict):
        return {str(k): _normalize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_normalize(v) for v in obj]
    if hasattr(obj, "item"):  # numpy scalar
        return _normalize(obj.item())
    return str(obj)


def canonical_config(config: dict) -> str:
    """Sorted-key JSON with numbers normalized (1.0 and 1 hash alike)."""
    return json.dumps(_normalize(config), sort_keys=True, separators=(",", ":"))


def config_hash(config: dict) -> str:
    return hashlib.sha256(canonical_config(config).encode()).hexdigest()


@dataclass
class RunManifest:
    """What is needed to replay a run: the config (minus seed), the seed, and output hashes."""

    seed: int
    config: dict
    config_hash: str = ""
    version: str = __version__
    timestamp: str = ""
    budget_totals: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    command: str = ""

    def __post_init__(self):
        if not self.config_hash:
            self.config_hash = config_hash(self.config)
        if not self.timestamp:
            self.timestamp = datetime.now(timezone.utc).isoformat(timespec="seconds")


def write_manifest(manifest: RunManifest, path) -> Path:
    path = Path(path)
    doc = asdict(manifest)
    doc["replay"] = f"dpsparse replay {path.name}"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def read_manifest(path) -> RunManifest:
    doc = json.loads(Path(path).read_text())
    doc.pop("replay", None)
    return RunManifest(**doc)


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    if hasattr(v, "item"):
        return _fmt(v.item())
    return str(v)


def rows_to_csv(rows: list[dict], columns: list[str] | None = None) -> str:
    """Deterministic CSV text: fixed column order, floats via repr."""
    if not rows:
        return ""
    columns = columns or list(rows[0])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c, "")) for c in columns])
    return buf.getvalue()


def write_csv(rows: list[dict], path, columns: list[str] | None = None) -> Path:
    path = Path(path)
    path.write_text(rows_to_csv(rows, columns))
    return path


def format_table(rows: list[dict], columns: list[str]) -> str:
    """Fixed-width text table for terminal output."""
    cells = [[c for c in columns]]
    for r in rows:
        cells.append([f"{r[c]:.3f}" if isinstance(r.get(c), float) else str(r.get(c, ""))
                      for c in columns])
    widths = [max(len(row[i]) for row in cells) for i in range(len(columns))]
    return "\n".join("  ".join(x.rjust(w) for x, w in zip(row, widths)) for row in cells)

"""Run manifests, output writers and the pulse file format."""
from __future__ import annotations

import csv
import io
import json
import os
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .dynamics import ControlPulse

MANIFEST_TAG = "# lztrap-manifest "
PULSE_FORMAT_VERSION = 1


@dataclass(frozen=True)
class RunManifest:
    subcommand: str
    parameters: dict
    seed: int | None
    version: str = __version__
    timestamp: str = ""

    @classmethod
    def create(cls, subcommand, parameters, seed=None, timestamp=None) -> "RunManifest":
        return cls(subcommand, dict(parameters), seed, __version__, timestamp or now_iso())

    def to_dict(self) -> dict:
        return {
            "subcommand": self.subcommand,
            "parameters": self.parameters,
            "seed": self.seed,
            "version": self.version,
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunManifest":
        return cls(d["subcommand"], d["parameters"], d.get("seed"), d["version"], d["timestamp"])


def now_iso() -> str:
    """Current UTC time, or ``SOURCE_DATE_EPOCH`` when set (reproducible builds)."""
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    t = float(epoch) if epoch else time.time()
    return datetime.fromtimestamp(t, tz=timezone.utc).isoformat(timespec="seconds")


def fmt(x) -> str:
    """Locale-free text for a CSV cell; floats at 17 significant digits."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def render_csv(manifest: RunManifest, header, rows, footer: dict | None = None) -> str:
    buf = io.StringIO()
    buf.write(MANIFEST_TAG + json.dumps(manifest.to_dict(), sort_keys=True) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    for key, value in (footer or {}).items():
        buf.write(f"# {key}={fmt(value)}\n")
    return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def render_json(manifest: RunManifest, payload: dict) -> str:
    # repr-based float text round-trips exactly, so replays are byte-identical
    doc = {"manifest": manifest.to_dict(), **_jsonable(payload)}
    return json.dumps(doc, indent=2, sort_keys=False, allow_nan=False) + "\n"


def write_text(path, text: str) -> None:
    """Write ``text`` to ``path`` (``-`` means stdout) via a temporary file."""
    if str(path) == "-":
        print(text, end="")
        return
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def read_manifest(path) -> RunManifest:
    text = Path(path).read_text(encoding="utf-8")
    if text.startswith(MANIFEST_TAG):
        line = text.splitlines()[0]
        return RunManifest.from_dict(json.loads(line[len(MANIFEST_TAG):]))
    doc = json.loads(text)
    if "manifest" not in doc:
        raise ValueError(f"{path} carries no run manifest")
    return RunManifest.from_dict(doc["manifest"])


def pulse_to_dict(pulse: ControlPulse, delta: float | None = None) -> dict:
    d = {
        "version": PULSE_FORMAT_VERSION,
        "T": pulse.T,
        "boundaries": pulse.boundaries.tolist(),
        "amplitudes": pulse.amplitudes.tolist(),
    }
    if delta is not None:
        d["delta"] = float(delta)
    return d


def pulse_from_dict(d: dict) -> tuple[ControlPulse, float | None]:
    """Parse a pulse document; also accepts a run record with a ``pulse`` key."""
    if "pulse" in d and isinstance(d["pulse"], dict):
        d = d["pulse"]
    missing = {"version", "T", "boundaries", "amplitudes"} - set(d)
    if missing:
        raise ValueError(f"pulse file is missing fields: {sorted(missing)}")
    if d["version"] != PULSE_FORMAT_VERSION:
        raise ValueError(f"unsupported pulse file version {d['version']!r}")
    pulse = ControlPulse(d["boundaries"], d["amplitudes"])
    if abs(pulse.T - float(d["T"])) > 1e-12 * max(1.0, pulse.T):
        raise ValueError("pulse file T disagrees with its last boundary")
    return pulse, d.get("delta")


def read_pulse(path) -> tuple[ControlPulse, float | None]:
    return pulse_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

"""Checkpoints and line-delimited report records (JSON text throughout)."""
from __future__ import annotations

import datetime as _dt
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .field import ApertureMap, GridSpec
from .network import NetworkSpec, SurfaceParams

CHECKPOINT_FORMAT = "diffractive-checkpoint"
CHECKPOINT_VERSION = 1
RECORD_KINDS = ("rank", "basisgen", "train-epoch", "eval", "dataset")
# Keys that differ between otherwise identical reruns.
VOLATILE_KEYS = ("timestamp", "wall_time")


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=True)


def config_digest(config: dict) -> str:
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        return float(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


@dataclass
class ReportRecord:
    kind: str
    payload: dict
    config: dict
    config_digest: str = ""
    timestamp: str = field(default_factory=_now)

    def __post_init__(self):
        if self.kind not in RECORD_KINDS:
            raise ValueError(f"unknown record kind {self.kind!r}")
        if not self.config_digest:
            self.config_digest = config_digest(self.config)

    def to_dict(self) -> dict:
        return _jsonable({"kind": self.kind, "payload": self.payload, "config": self.config,
                          "config_digest": self.config_digest, "timestamp": self.timestamp})

    @classmethod
    def from_dict(cls, d: dict) -> "ReportRecord":
        return cls(d["kind"], d["payload"], d["config"], d["config_digest"], d["timestamp"])


def write_records(path, records) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")
    return path


def read_records(path) -> list[ReportRecord]:
    out = []
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(ReportRecord.from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError) as exc:
                raise ConfigError(f"{path}:{n}: malformed record ({exc})") from exc
    return out


def strip_volatile(obj):
    """Copy of a JSON tree without timestamp-like keys, for rerun comparisons."""
    if isinstance(obj, dict):
        return {k: strip_volatile(v) for k, v in obj.items() if k not in VOLATILE_KEYS}
    if isinstance(obj, list):
        return [strip_volatile(v) for v in obj]
    return obj


def _aperture_dict(ap: ApertureMap) -> dict:
    d = {"grid": ap.grid.to_dict()}
    if ap.size != ap.grid.size:
        d["kept_indices"] = ap.kept_indices.tolist()
    return d


def _aperture_from(d: dict) -> ApertureMap:
    grid = GridSpec.from_dict(d["grid"])
    if "kept_indices" in d:
        return ApertureMap(grid, np.asarray(d["kept_indices"]))
    return ApertureMap.full(grid)


def checkpoint_dict(net: NetworkSpec, config: dict | None = None) -> dict:
    """Self-describing checkpoint. Floats go through JSON repr, which round-trips exactly."""
    return _jsonable({
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "input_aperture": _aperture_dict(net.input_aperture),
        "output_aperture": _aperture_dict(net.output_aperture),
        "distances": list(net.distances),
        "form": net.form,
        "seed": net.seed,
        "layers": [{"grid": s.grid.to_dict(), "mode": s.mode, "raw_phase": s.raw_phase,
                    "raw_amplitude": s.raw_amplitude} for s in net.layers],
        "config": config,
    })


def network_from_checkpoint(d: dict) -> NetworkSpec:
    if d.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError("not a diffractive checkpoint")
    if d.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {d.get('version')}")
    layers = [SurfaceParams(GridSpec.from_dict(l["grid"]), np.array(l["raw_phase"], float),
                            np.array(l["raw_amplitude"], float), l["mode"]) for l in d["layers"]]
    return NetworkSpec(_aperture_from(d["input_aperture"]), _aperture_from(d["output_aperture"]),
                       layers, d["distances"], d.get("form", "dense"), d.get("seed"))


def save_checkpoint(path, net: NetworkSpec, config: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(checkpoint_dict(net, config), sort_keys=True, indent=1))
    return path


def load_checkpoint(path) -> tuple[NetworkSpec, dict | None]:
    d = json.loads(Path(path).read_text())
    return network_from_checkpoint(d), d.get("config")

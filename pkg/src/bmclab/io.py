"""Configuration parsing and report serialization.

Configs are JSON objects whose keys are the fields of
:class:`~bmclab.experiments.ExperimentConfig`.  Reports are written as a
CSV table, a JSON summary and a run manifest.  Every float in these
outputs is written with 17 significant digits, so values round-trip
exactly.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import tempfile
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from ._validation import ConfigurationError
from .experiments import COMMANDS, ExperimentConfig

__all__ = [
    "RunManifest",
    "parse_config",
    "config_from_dict",
    "config_hash",
    "format_float",
    "dumps",
    "csv_text",
    "write_text_atomic",
    "run_command",
]

REQUIRED = ("model", "n", "replicates", "seed")
_INT_FIELDS = {"n", "replicates", "seed", "cap", "burn_in", "threads", "min_survivors", "diag_horizon",
               "pairs", "b", "ks_replicates", "ks_horizon"}
_FLOAT_FIELDS = {"tolerance", "diag_tolerance", "M_bound", "ks_level"}


def _coerce(key, value):
    if key in _INT_FIELDS:
        if value is None and key in ("burn_in", "ks_horizon"):
            return None
        if isinstance(value, bool) or not isinstance(value, (int, float)) or value != int(value):
            raise ConfigurationError(f"{key}: expected an integer, got {value!r}")
        return int(value)
    if key in _FLOAT_FIELDS:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigurationError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if key == "model" and not isinstance(value, str):
        raise ConfigurationError(f"model: expected a gallery name, got {value!r}")
    if key == "params" and not isinstance(value, dict):
        raise ConfigurationError("params: expected an object")
    if key == "annealed" and not isinstance(value, bool):
        raise ConfigurationError("annealed: expected true or false")
    if key in ("targets", "y_grid"):
        if not isinstance(value, list):
            raise ConfigurationError(f"{key}: expected a list")
        return tuple(value) if key == "y_grid" else tuple(tuple(v) if isinstance(v, list) else v for v in value)
    return value


def config_from_dict(raw: dict) -> ExperimentConfig:
    """Validate ``raw`` and apply defaults."""
    if not isinstance(raw, dict):
        raise ConfigurationError("config must be a JSON object")
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigurationError(f"unknown config key(s) {unknown}; allowed {sorted(known)}")
    missing = [k for k in REQUIRED if k not in raw]
    if missing:
        raise ConfigurationError(f"missing required config key(s) {missing}")
    return ExperimentConfig(**{k: _coerce(k, v) for k, v in raw.items()})


def _canonical(raw):
    return json.dumps(raw, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def config_hash(raw: dict) -> str:
    """SHA-256 of the canonical JSON form of ``raw``."""
    return hashlib.sha256(_canonical(raw).encode("ascii")).hexdigest()


def _read_raw(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise ConfigurationError(f"cannot read config {path}: {err.strerror}") from err
    try:
        return json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigurationError(f"{path}: malformed JSON ({err.msg} at line {err.lineno})") from err


def parse_config(path) -> ExperimentConfig:
    """Read and validate a JSON config file."""
    return config_from_dict(_read_raw(path))


# --- serialization --------------------------------------------------------------


def format_float(x: float) -> str:
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format_float(v)
    return "" if v is None else str(v)


def csv_text(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    return buf.getvalue()


def dumps(obj, indent=2, _level=0) -> str:
    """JSON text with 17-significant-digit floats; non-finite floats become null."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        if len(obj) == 0:
            return "[]"
        return "[\n" + ",\n".join(pad + dumps(v, indent, _level + 1) for v in obj) + "\n" + end + "]"
    if obj is None or isinstance(obj, (bool, np.bool_)):
        return json.dumps(None if obj is None else bool(obj))
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return format_float(obj) if math.isfinite(obj) else "null"
    return json.dumps(str(obj))


def write_text_atomic(path, text: str):
    """Write ``text`` to ``path`` through a temporary file and a rename."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except OSError as err:
        raise OSError(err.errno, f"cannot write {path}: {err.strerror}") from err


@dataclass
class RunManifest:
    config_hash: str
    seed: int
    version: str
    outputs: dict = field(default_factory=dict)
    verdicts: dict = field(default_factory=dict)
    passed: bool = True

    def write(self, path):
        write_text_atomic(path, dumps(asdict(self)) + "\n")


def _load_manifest(path, cfg_hash, seed, version):
    # commands sharing a config and an output directory share one manifest
    try:
        old = json.loads(Path(path).read_text())
        if old.get("config_hash") == cfg_hash and old.get("seed") == seed:
            return RunManifest(cfg_hash, seed, version, old.get("outputs", {}), old.get("verdicts", {}))
    except (OSError, ValueError, AttributeError):
        pass
    return RunManifest(cfg_hash, seed, version)


def run_command(command: str, cfg: ExperimentConfig, out_dir, cfg_hash: str = "") -> tuple[int, RunManifest]:
    """Run ``command`` and write ``<command>.csv``, ``<command>.json`` and ``manifest.json``.

    Returns the exit status (0 when no gate failed) and the manifest.
    """
    from . import __version__

    if command not in COMMANDS:
        raise ConfigurationError(f"unknown command {command!r}; choose from {sorted(COMMANDS)}")
    est = COMMANDS[command].from_config(cfg).fit()
    rep = est.report_
    out_dir = Path(out_dir)
    csv_path = out_dir / f"{command}.csv"
    json_path = out_dir / f"{command}.json"
    write_text_atomic(csv_path, csv_text(rep.record_columns, rep.records))
    body = rep.to_dict()
    body["config"] = cfg.to_dict()
    write_text_atomic(json_path, dumps(body) + "\n")
    manifest = _load_manifest(out_dir / "manifest.json", cfg_hash, cfg.seed, __version__)
    manifest.outputs[command] = {"csv": str(csv_path), "json": str(json_path)}
    manifest.verdicts[command] = rep.verdicts
    manifest.passed = all(v != "fail" for gates in manifest.verdicts.values() for v in gates.values())
    manifest.write(out_dir / "manifest.json")
    return (0 if rep.passed else 1), manifest

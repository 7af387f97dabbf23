"""CSV and JSON persistence with run manifests.

Every CSV starts with a header row followed by ``# manifest <hash>``, where
the hash covers the deterministic inputs of the run (subcommand, resolved
configuration, seed, arguments, tool version).  Numbers are written with
17 significant digits so a rerun produces the same bytes.

Outputs of a run are staged in memory and written only when the run
succeeds, each file via a temporary name and an atomic rename.
"""
from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .physics import Spectrum, hz_to_rad

MANIFEST_NAME = "manifest.json"


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_jsonable)


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def to_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n"


@dataclass
class RunManifest:
    subcommand: str
    config: dict | None
    seed: int | None
    arguments: dict
    version: str = __version__
    outputs: list = field(default_factory=list)
    wall_clock_s: float = 0.0

    def input_hash(self) -> str:
        doc = {
            "subcommand": self.subcommand,
            "config": self.config,
            "seed": self.seed,
            "arguments": self.arguments,
            "version": self.version,
        }
        return hashlib.sha256(_canonical(doc).encode()).hexdigest()[:16]

    def to_dict(self) -> dict:
        return {
            "subcommand": self.subcommand,
            "config": self.config,
            "seed": self.seed,
            "arguments": self.arguments,
            "version": self.version,
            "outputs": list(self.outputs),
            "wall_clock_s": self.wall_clock_s,
            "input_hash": self.input_hash(),
        }

    @classmethod
    def load(cls, path) -> "RunManifest":
        doc = json.loads(Path(path).read_text())
        known = {"subcommand", "config", "seed", "arguments", "version", "outputs", "wall_clock_s", "input_hash"}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown manifest keys: {sorted(unknown)}")
        doc.pop("input_hash", None)
        return cls(**doc)


def csv_text(header, rows, manifest_hash: str) -> str:
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    lines = [",".join(header), f"# manifest {manifest_hash}"]
    for row in rows:
        lines.append(",".join(format(float(v), ".17g") for v in row))
    return "\n".join(lines) + "\n"


def spectrum_csv(spectrum: Spectrum, manifest_hash: str, stderr=None) -> str:
    cols = [spectrum.detunings_hz, spectrum.transmissions]
    header = ["delta_hz", "transmission"]
    if stderr is not None:
        cols.append(np.asarray(stderr, dtype=float))
        header.append("stderr")
    return csv_text(header, np.column_stack(cols), manifest_hash)


def read_csv(path) -> tuple[list[str], np.ndarray]:
    """Read a CSV written by :func:`csv_text` (comment lines are skipped)."""
    text = Path(path).read_text().splitlines()
    body = [ln for ln in text if ln.strip() and not ln.startswith("#")]
    if not body:
        raise ValueError(f"{path}: empty CSV")
    header = [h.strip() for h in body[0].split(",")]
    try:
        data = np.array([[float(v) for v in ln.split(",")] for ln in body[1:]], dtype=float)
    except ValueError as exc:
        raise ValueError(f"{path}: malformed numeric row ({exc})") from None
    if data.size and data.shape[1] != len(header):
        raise ValueError(f"{path}: rows have {data.shape[1]} columns, header has {len(header)}")
    return header, data.reshape(-1, len(header))


def read_spectrum_csv(path) -> Spectrum:
    header, data = read_csv(path)
    if header[:2] != ["delta_hz", "transmission"]:
        raise ValueError(f"{path}: expected header 'delta_hz,transmission', got {','.join(header)!r}")
    order = np.argsort(data[:, 0], kind="stable")
    return Spectrum(hz_to_rad(data[order, 0]), data[order, 1], source=str(path))


def atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class OutputSet:
    """Files of one run, kept in memory until :meth:`commit`."""

    def __init__(self, out_dir, manifest: RunManifest):
        self.out_dir = Path(out_dir)
        self.manifest = manifest
        self.files: dict[str, str] = {}

    @property
    def hash(self) -> str:
        return self.manifest.input_hash()

    def add(self, name: str, text: str) -> None:
        self.files[name] = text

    def add_csv(self, name, header, rows) -> None:
        self.add(name, csv_text(header, rows, self.hash))

    def add_json(self, name, obj) -> None:
        self.add(name, to_json(obj))

    def commit(self, wall_clock_s: float) -> list[Path]:
        written = []
        for name, text in self.files.items():
            atomic_write(self.out_dir / name, text)
            written.append(self.out_dir / name)
        self.manifest.outputs = sorted(self.files)
        self.manifest.wall_clock_s = wall_clock_s
        atomic_write(self.out_dir / MANIFEST_NAME, to_json(self.manifest.to_dict()))
        return written

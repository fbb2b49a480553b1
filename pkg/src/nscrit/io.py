"""Snapshot files, trajectory directories and run configuration.

Snapshot layout (all little-endian):

    offset  size  field
    0       4     magic b"NSCN"
    4       4     u32 version (= 1)
    8       4     u32 n, points per axis
    12      8     f64 box length L
    20      8     f64 time
    28      8     f64 viscosity
    36      4     u32 field_count
    40      ...   payload: field_count blocks of n^3 complex coefficients, each a
                  (real, imag) f64 pair, indices in FFT order, row-major with k1
                  slowest; the full Hermitian-redundant array is stored
    end-4   4     u32 CRC32 (zlib) of the payload

Coefficients are the normalized discrete Fourier coefficients fftn(values)/n^3.
A velocity snapshot holds 4 fields: u1, u2, u3 and the pressure.
"""
from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .cylinders import Trajectory
from .spectral_core import Grid, ScalarField, VectorField

MAGIC = b"NSCN"
VERSION = 1
HEADER = struct.Struct("<4sIIdddI")
TRAILER = struct.Struct("<I")
MANIFEST = "manifest.json"


class SnapshotFormatError(ValueError):
    """A snapshot file does not match the expected layout."""

    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        where = f" at byte offset {offset}" if offset is not None else ""
        super().__init__(f"{message}{where}")


@dataclass
class Snapshot:
    n: int
    length: float
    time: float
    viscosity: float
    fields: np.ndarray  # complex128, shape (field_count, n, n, n)


def encode_snapshot(snap: Snapshot) -> bytes:
    fields = np.ascontiguousarray(snap.fields, dtype="<c16")
    if fields.ndim != 4 or fields.shape[1:] != (snap.n,) * 3:
        raise ValueError(f"fields must have shape (count, {snap.n}, {snap.n}, {snap.n}), "
                         f"got {fields.shape}")
    payload = fields.tobytes()
    header = HEADER.pack(MAGIC, VERSION, snap.n, snap.length, snap.time, snap.viscosity,
                         fields.shape[0])
    return header + payload + TRAILER.pack(zlib.crc32(payload))


def decode_snapshot(data: bytes) -> Snapshot:
    if len(data) < HEADER.size:
        raise SnapshotFormatError(
            f"file holds {len(data)} bytes, shorter than the {HEADER.size}-byte header", len(data))
    magic, version, n, length, time, nu, count = HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise SnapshotFormatError(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
    if version != VERSION:
        raise SnapshotFormatError(f"unsupported version {version}, expected {VERSION}", 4)
    if n < 1:
        raise SnapshotFormatError(f"invalid grid size {n}", 8)
    payload_len = count * n**3 * 16
    expected = HEADER.size + payload_len + TRAILER.size
    if len(data) != expected:
        raise SnapshotFormatError(
            f"checksum region length mismatch: expected {expected} bytes "
            f"(payload {payload_len}), found {len(data)}",
            min(len(data), expected),
        )
    payload = data[HEADER.size: HEADER.size + payload_len]
    (stored,) = TRAILER.unpack_from(data, HEADER.size + payload_len)
    actual = zlib.crc32(payload)
    if stored != actual:
        raise SnapshotFormatError(
            f"checksum mismatch: stored {stored:#010x}, computed {actual:#010x}",
            HEADER.size + payload_len,
        )
    fields = np.frombuffer(payload, dtype="<c16").reshape(count, n, n, n).astype(complex)
    return Snapshot(n, length, time, nu, fields)


def write_snapshot(path, snap: Snapshot) -> None:
    Path(path).write_bytes(encode_snapshot(snap))


def read_snapshot(path) -> Snapshot:
    return decode_snapshot(Path(path).read_bytes())


# ---------------------------------------------------------------- trajectories

def _snapshot_name(j: int) -> str:
    return f"snap_{j:06d}.nscn"


def write_trajectory(directory, traj: Trajectory, config_echo: dict | None = None) -> Path:
    """Write one snapshot per time plus manifest.json (and energy history if present)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    grid = traj.grid
    files = []
    for j, (t, u, p) in enumerate(zip(traj.times, traj.velocity, traj.pressure)):
        fields = np.concatenate([u.coeffs, p.coeffs[None]])
        name = _snapshot_name(j)
        write_snapshot(d / name, Snapshot(grid.n, grid.length, float(t), traj.viscosity, fields))
        files.append(name)
    manifest = {
        "format": "NSCN",
        "version": VERSION,
        "n": grid.n,
        "length": grid.length,
        "viscosity": traj.viscosity,
        "times": [float(t) for t in traj.times],
        "snapshots": files,
        "fields": ["u1", "u2", "u3", "pressure"],
        "config": config_echo or {},
    }
    if traj.history:
        np.savetxt(d / "history.csv", np.column_stack([traj.history[k] for k in
                                                       ("time", "energy", "dissipation")]),
                   delimiter=",", header="time,energy,dissipation", comments="", fmt="%.17g")
        manifest["history"] = "history.csv"
    (d / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return d


def read_trajectory(directory) -> Trajectory:
    d = Path(directory)
    try:
        manifest = json.loads((d / MANIFEST).read_text())
    except FileNotFoundError:
        raise FileNotFoundError(f"no {MANIFEST} in trajectory directory {d}") from None
    grid = Grid(int(manifest["n"]), float(manifest["length"]))
    times, vel, pre = [], [], []
    for name, t in zip(manifest["snapshots"], manifest["times"]):
        snap = read_snapshot(d / name)
        if snap.n != grid.n or snap.length != grid.length:
            raise SnapshotFormatError(f"{name}: grid ({snap.n}, {snap.length}) differs from "
                                      f"manifest ({grid.n}, {grid.length})")
        if snap.fields.shape[0] != 4:
            raise SnapshotFormatError(f"{name}: expected 4 fields, found {snap.fields.shape[0]}", 36)
        if snap.time != t:
            raise SnapshotFormatError(f"{name}: time {snap.time} differs from manifest {t}", 20)
        times.append(snap.time)
        vel.append(VectorField(grid, snap.fields[:3]))
        pre.append(ScalarField(grid, snap.fields[3]))
    history = {}
    if "history" in manifest:
        h = np.loadtxt(d / manifest["history"], delimiter=",", skiprows=1, ndmin=2)
        history = {"time": h[:, 0], "energy": h[:, 1], "dissipation": h[:, 2]}
    return Trajectory(np.array(times), vel, pre, float(manifest["viscosity"]), history)


# ---------------------------------------------------------------- run config

_FLOAT = float


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _str(text: str) -> str:
    return text.strip()


CONFIG_KEYS = {
    "grid.n": (int, 32),
    "grid.L": (_FLOAT, 2 * np.pi),
    "solver.dt": (_FLOAT, 1e-3),
    "solver.T": (_FLOAT, 0.1),
    "solver.t_start": (_FLOAT, 0.0),
    "solver.stride": (int, 10),
    "solver.nu": (_FLOAT, 1.0),
    "solver.dealias": (_bool, True),
    "initial.preset": (_str, "taylor_green"),
    "initial.amplitude": (_FLOAT, 1.0),
    "initial.kmax": (int, 4),
    "initial.seed": (int, 0),
    "criteria.eps0": (_FLOAT, 1e-2),
    "criteria.eps1": (_FLOAT, 1e-2),
    "criteria.eps": (_FLOAT, 1e-2),
    "criteria.M": (_FLOAT, None),
    "criteria.c": (_FLOAT, 1e-2),
    "criteria.p": (_FLOAT, 3.0),
    "criteria.q": (_FLOAT, float("inf")),
    "criteria.r_unit": (_FLOAT, None),
    "sweeps.radii": (_floats, None),
    "sweeps.lambdas": (_ints, [2, 4]),
    "sweeps.count": (int, 8),
    "io.out": (_str, "traj"),
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    values: dict

    def __getitem__(self, key: str):
        return self.values[key]

    def echo(self) -> dict:
        return {k: (repr(v) if isinstance(v, float) and not np.isfinite(v) else v)
                for k, v in sorted(self.values.items())}


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    """Parse ``key = value`` lines; '#' starts a comment; unknown keys are errors."""
    values = {k: default for k, (_, default) in CONFIG_KEYS.items()}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        conv = CONFIG_KEYS[key][0]
        try:
            values[key] = conv(value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from None
    return RunConfig(values)


def load_config(path) -> RunConfig:
    p = Path(path)
    return parse_config(p.read_text(), str(p))


def format_rows(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    """CSV text with floats written by repr, so output is reproducible bit for bit."""
    def cell(v):
        if isinstance(v, (float, np.floating)):
            return repr(float(v))
        return str(v)

    lines = [",".join(header)]
    lines += [",".join(cell(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"
